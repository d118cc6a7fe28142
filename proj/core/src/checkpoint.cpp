#include "drag/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace drag {

namespace {

constexpr char kMagic[4] = {'D', 'R', 'A', 'G'};

void put_u32(std::ofstream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void put_u64(std::ofstream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

void put_f64(std::ofstream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

struct Reader {
  std::ifstream in;
  std::string path;

  void read_bytes(char* dst, std::size_t n, const char* what) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n)) {
      throw FormatError("load_checkpoint: truncated file " + path + " while reading " + what);
    }
  }
  std::uint32_t u32(const char* what) {
    char b[4];
    read_bytes(b, 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i]))
                                     << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    char b[8];
    read_bytes(b, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i]))
                                     << (8 * i);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
};

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::string Checkpoint::meta(const std::string& key, const std::string& fallback) const {
  for (const auto& [k, v] : metadata) {
    if (k == key) return v;
  }
  return fallback;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("save_checkpoint: cannot open " + path.string());
  out.write(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, tensor] : checkpoint.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (auto e : tensor.shape()) put_u64(out, e);
    for (double v : tensor.values()) put_f64(out, v);
  }
  std::string meta;
  for (const auto& [k, v] : checkpoint.metadata) {
    meta += k;
    meta += "=";
    meta += v;
    meta += "\n";
  }
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  if (!out) throw FormatError("save_checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r{std::ifstream(path, std::ios::binary), path.string()};
  if (!r.in) throw FormatError("load_checkpoint: cannot open " + path.string());

  char magic[4];
  r.read_bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("load_checkpoint: bad magic in " + path.string());
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("load_checkpoint: unsupported version " + std::to_string(version) + " in " +
                      path.string());
  }
  Checkpoint checkpoint;
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t name_len = r.u32("tensor name length");
    std::string name(name_len, '\0');
    r.read_bytes(name.data(), name_len, "tensor name");
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank == 0 || rank > 8) {
      throw FormatError("load_checkpoint: implausible rank " + std::to_string(rank) + " for '" +
                        name + "' in " + path.string());
    }
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& e : shape) {
      e = r.u64("tensor extent");
      numel *= e;
    }
    std::vector<double> values(numel);
    for (auto& v : values) v = r.f64("tensor values");
    checkpoint.tensors.emplace_back(std::move(name), Tensor::from(shape, std::move(values)));
  }
  const std::uint32_t meta_len = r.u32("metadata length");
  std::string meta(meta_len, '\0');
  r.read_bytes(meta.data(), meta_len, "metadata");
  std::size_t pos = 0;
  while (pos < meta.size()) {
    const std::size_t eol = meta.find('\n', pos);
    const std::string line = meta.substr(pos, eol == std::string::npos ? eol : eol - pos);
    pos = eol == std::string::npos ? meta.size() : eol + 1;
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("load_checkpoint: malformed metadata line '" + line + "' in " +
                        path.string());
    }
    checkpoint.metadata.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return checkpoint;
}

}  // namespace drag
