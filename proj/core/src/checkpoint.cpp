#include "irview/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "irview/errors.hpp"

#ifndef IRVIEW_CODE_VERSION
#define IRVIEW_CODE_VERSION "unknown"
#endif

namespace irview {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'I', 'R', 'V', 'W', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename V>
void put(std::ostream& out, V value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(V));
}

template <typename V>
V take(std::istream& in, const std::string& path) {
  V value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(V))) throw IoError("checkpoint: truncated file " + path);
  return value;
}

std::string take_string(std::istream& in, std::size_t n, const std::string& path) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw IoError("checkpoint: truncated file " + path);
  return s;
}

}  // namespace

std::string code_version() { return IRVIEW_CODE_VERSION; }

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot write " + path.string());
  KeyValueConfig meta = checkpoint.metadata;
  meta.set("kind", checkpoint.kind);
  const std::string text = meta.to_string();
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& t : checkpoint.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rank()));
    for (int d : t.value.shape()) put<std::int32_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.value.data()), static_cast<std::streamsize>(t.value.size() * sizeof(float)));
  }
  if (!out) throw IoError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  const std::string p = path.string();
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("checkpoint: " + p + " is not an irview checkpoint");
  const auto version = take<std::uint32_t>(in, p);
  if (version != kFormatVersion) throw IoError("checkpoint: unsupported format version " + std::to_string(version));
  const auto meta_len = take<std::uint64_t>(in, p);
  Checkpoint ckpt;
  ckpt.metadata = KeyValueConfig::parse(take_string(in, meta_len, p));
  ckpt.kind = ckpt.metadata.get_string("kind", "");
  auto entries = ckpt.metadata.entries();
  entries.erase("kind");
  ckpt.metadata = KeyValueConfig();
  for (const auto& [k, v] : entries) ckpt.metadata.set(k, v);

  const auto count = take<std::uint32_t>(in, p);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = take_string(in, take<std::uint32_t>(in, p), p);
    const auto rank = take<std::uint32_t>(in, p);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(take<std::int32_t>(in, p));
    t.value = Tensor<float>(shape);
    if (!in.read(reinterpret_cast<char*>(t.value.data()), static_cast<std::streamsize>(t.value.size() * sizeof(float))))
      throw IoError("checkpoint: truncated tensor " + t.name + " in " + p);
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

std::string describe(const Checkpoint& checkpoint) {
  std::ostringstream os;
  os << "kind: " << checkpoint.kind << '\n';
  for (const auto& [k, v] : checkpoint.metadata.entries()) os << "  " << k << " = " << v << '\n';
  std::size_t total = 0;
  for (const auto& t : checkpoint.tensors) {
    os << std::left << std::setw(36) << t.name << ' ' << std::setw(18) << shape_string(t.value.shape()) << ' '
       << t.value.size() << '\n';
    total += t.value.size();
  }
  os << "total parameters: " << total << '\n';
  return os.str();
}

std::vector<NamedTensor> snapshot(const ParameterList<float>& params) {
  std::vector<NamedTensor> out;
  out.reserve(params.size());
  for (const auto* p : params) out.push_back({p->name, p->value});
  return out;
}

void restore(const ParameterList<float>& params, const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  for (auto* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw LookupError("checkpoint: missing tensor " + p->name);
    if (it->second->value.shape() != p->value.shape())
      throw ShapeError("checkpoint: tensor " + p->name + " has shape " + shape_string(it->second->value.shape()) +
                       ", model expects " + shape_string(p->value.shape()));
    p->value = it->second->value;
  }
}

std::uint64_t weights_hash(const ParameterList<float>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
    for (std::size_t i = 0; i < p->value.size() * sizeof(float); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace irview
