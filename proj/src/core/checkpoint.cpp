#include "checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace sprig {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'R', 'I', 'G', 'C', 'K', '1'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& in, T& v, const char* what) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorCode::format, std::string("checkpoint: truncated ") + what);
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod(out, static_cast<uint64_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const char* what) {
  uint64_t n = 0;
  read_pod(in, n, what);
  if (n > (1ULL << 32)) throw Error(ErrorCode::format, "checkpoint: implausible string length");
  std::string s(static_cast<size_t>(n), '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw Error(ErrorCode::format, std::string("checkpoint: truncated ") + what);
  return s;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : params) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::format, "cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  write_string(out, ckpt.config_snapshot);
  write_pod(out, static_cast<uint64_t>(ckpt.params.size()));
  for (const auto& [name, t] : ckpt.params) {
    write_string(out, name);
    write_pod(out, static_cast<uint32_t>(t.shape().size()));
    for (int d : t.shape()) write_pod(out, static_cast<int64_t>(d));
    const auto& data = t.data();
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!out) throw Error(ErrorCode::format, "checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::format, "cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::format, "checkpoint: bad magic (not a checkpoint file)");
  }
  Checkpoint ckpt;
  read_pod(in, ckpt.version, "version");
  if (ckpt.version != kVersion) {
    throw Error(ErrorCode::format,
                "checkpoint: unsupported format version " + std::to_string(ckpt.version));
  }
  ckpt.config_snapshot = read_string(in, "config snapshot");
  uint64_t n_params = 0;
  read_pod(in, n_params, "parameter count");
  for (uint64_t i = 0; i < n_params; ++i) {
    std::string name = read_string(in, "parameter name");
    uint32_t rank = 0;
    read_pod(in, rank, "parameter rank");
    if (rank > 8) throw Error(ErrorCode::format, "checkpoint: implausible tensor rank");
    std::vector<int> shape(rank);
    int64_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      int64_t dim = 0;
      read_pod(in, dim, "dimension");
      if (dim < 1 || dim > (1 << 24)) throw Error(ErrorCode::format, "checkpoint: bad dimension");
      shape[d] = static_cast<int>(dim);
      numel *= dim;
    }
    std::vector<double> data(static_cast<size_t>(numel));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw Error(ErrorCode::format, "checkpoint: truncated tensor data");
    ckpt.params.emplace_back(std::move(name), Tensor::from_data(shape, std::move(data)));
  }
  return ckpt;
}

}  // namespace sprig
