#include "latent_atlas/latent_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "latent_atlas/errors.hpp"

namespace latent_atlas {

namespace {

constexpr char kMagic[8] = {'L', 'A', 'T', 'C', 'O', 'D', 'E', '\n'};

void swap_if_big(std::vector<float>& values) {
  if constexpr (std::endian::native == std::endian::big) {
    for (float& v : values) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      bits = __builtin_bswap32(bits);
      std::memcpy(&v, &bits, 4);
    }
  }
}

std::uint64_t to_le64(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

}  // namespace

void save_latent(const std::filesystem::path& path, const LatentCode<float>& code,
                 const CodeLayout& layout) {
  validate_code(code, layout);

  nlohmann::json manifest = {
      {"space", space_name(code.space)},
      {"latent_dim", layout.latent_dim},
      {"num_style_layers", layout.num_style_layers},
      {"split_layer", layout.split_layer},
      {"entries", code.entries.size()},
      {"entry_shape", std::vector<int>{layout.latent_dim}},
      {"base_shape", is_hybrid(code.space) ? code.base.shape() : std::vector<int>{}},
  };
  const std::string mtext = manifest.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = to_le64(mtext.size());
  f.write(reinterpret_cast<const char*>(&len), 8);
  f.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));

  auto write_tensor = [&](const Tensor<float>& t) {
    std::vector<float> buf(t.data(), t.data() + t.numel());
    swap_if_big(buf);
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * 4));
  };
  for (const auto& e : code.entries) write_tensor(e);
  if (is_hybrid(code.space)) write_tensor(code.base);
  if (!f) throw IoError("failed writing " + path.string());
}

LatentCode<float> load_latent(const std::filesystem::path& path, CodeLayout* layout_out) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open latent file " + path.string());

  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError(path.string() + " is not a .lat latent file");
  }
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 8);
  len = to_le64(len);
  if (!f || len == 0 || len > (1u << 20)) {
    throw IoError(path.string() + ": corrupt latent manifest length");
  }
  std::string mtext(len, '\0');
  f.read(mtext.data(), static_cast<std::streamsize>(len));
  if (!f) throw IoError(path.string() + ": truncated latent manifest");

  nlohmann::json manifest;
  Space space;
  CodeLayout layout;
  std::size_t num_entries = 0;
  std::vector<int> base_shape;
  try {
    manifest = nlohmann::json::parse(mtext);
    space = parse_space(manifest.at("space").get<std::string>());
    layout.latent_dim = manifest.at("latent_dim").get<int>();
    layout.num_style_layers = manifest.at("num_style_layers").get<int>();
    layout.split_layer = manifest.at("split_layer").get<int>();
    num_entries = manifest.at("entries").get<std::size_t>();
    base_shape = manifest.at("base_shape").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": invalid latent manifest: " + e.what());
  }
  layout.tap_shape = base_shape;

  auto read_tensor = [&](const std::vector<int>& shape) {
    Tensor<float> t(shape);
    std::vector<float> buf(static_cast<std::size_t>(t.numel()));
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (!f) throw IoError(path.string() + ": truncated latent blob");
    swap_if_big(buf);
    std::copy(buf.begin(), buf.end(), t.data());
    return t;
  };

  LatentCode<float> code;
  code.space = space;
  for (std::size_t i = 0; i < num_entries; ++i) {
    code.entries.push_back(read_tensor({layout.latent_dim}));
  }
  if (is_hybrid(space)) {
    if (base_shape.size() != 3) {
      throw IoError(path.string() + ": hybrid latent missing its base shape");
    }
    code.base = read_tensor(base_shape);
  }
  if (layout_out) *layout_out = layout;
  return code;
}

}  // namespace latent_atlas
