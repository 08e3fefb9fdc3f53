#include "gor/serialize.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

namespace gor {

static_assert(std::endian::native == std::endian::little,
              "parameter files are little-endian; add byte swapping for this host");

namespace {

constexpr char kMagic[4] = {'G', 'O', 'R', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated parameter file: " + path);
  return v;
}

}  // namespace

void save_params(const std::string& path, const std::map<std::string, TensorXd>& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(kMagic, 4);
  put(out, kVersion);
  for (const auto& [name, t] : params) {
    put(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(out, static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) put(out, static_cast<std::int64_t>(d));
    out.write(reinterpret_cast<const char*>(t.flat().data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!out) throw IoError("write failed: " + path);
}

std::map<std::string, TensorXd> load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != std::string(kMagic, 4))
    throw IoError("'" + path + "' is not a parameter file (bad magic)");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kVersion)
    throw IoError("'" + path + "' has unsupported version " + std::to_string(version));
  std::map<std::string, TensorXd> params;
  while (true) {
    std::uint32_t name_len;
    in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    if (in.eof()) break;
    if (!in || name_len == 0 || name_len > 4096) throw IoError("corrupt record in " + path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rank = get<std::uint32_t>(in, path);
    if (rank > 8) throw IoError("corrupt record in " + path);
    Shape shape(rank);
    for (auto& d : shape) {
      d = static_cast<Index>(get<std::int64_t>(in, path));
      if (d <= 0) throw IoError("corrupt record in " + path);
    }
    TensorXd t = TensorXd::zeros(shape);
    in.read(reinterpret_cast<char*>(t.mutable_flat().data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw IoError("truncated parameter file: " + path);
    if (!params.emplace(std::move(name), std::move(t)).second)
      throw IoError("duplicate parameter in " + path);
  }
  return params;
}

void load_into_model(const std::string& path, Model& model) {
  auto loaded = load_params(path);
  for (auto& [name, stored] : model.params) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw IoError("'" + path + "' is missing parameter '" + name + "'");
    if (it->second.shape() != stored.shape())
      throw IoError("parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                    " in file, model expects " + shape_str(stored.shape()));
    stored.mutable_flat() = it->second.flat();
  }
  for (const auto& [name, t] : loaded)
    if (!model.params.count(name))
      throw IoError("'" + path + "' contains unknown parameter '" + name + "'");
}

}  // namespace gor
