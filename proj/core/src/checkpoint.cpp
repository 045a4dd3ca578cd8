#include "latent_atlas/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "latent_atlas/errors.hpp"

namespace latent_atlas {

namespace {

constexpr const char* kManifestName = "manifest.json";
constexpr const char* kBlobName = "params.bin";

static_assert(sizeof(float) == 4, "float32 blobs require 4-byte floats");

void to_little_endian(std::vector<float>& values) {
  if constexpr (std::endian::native == std::endian::big) {
    for (float& v : values) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      bits = __builtin_bswap32(bits);
      std::memcpy(&v, &bits, 4);
    }
  }
}

}  // namespace

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

const Tensor<float>& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw IoError("checkpoint has no tensor named '" + name + "'");
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string());

  nlohmann::json params = nlohmann::json::array();
  std::int64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    params.push_back({{"name", name},
                      {"shape", t.shape()},
                      {"dtype", "float32"},
                      {"offset", offset},
                      {"count", t.numel()}});
    offset += t.numel() * 4;
  }
  nlohmann::json manifest = {{"format", ckpt.format},
                             {"meta", ckpt.meta},
                             {"blob", kBlobName},
                             {"params", params}};

  {
    std::ofstream mf(dir / kManifestName, std::ios::binary);
    if (!mf) throw IoError("cannot write " + (dir / kManifestName).string());
    mf << manifest.dump(2) << "\n";
    if (!mf) throw IoError("failed writing " + (dir / kManifestName).string());
  }

  std::ofstream bf(dir / kBlobName, std::ios::binary);
  if (!bf) throw IoError("cannot write " + (dir / kBlobName).string());
  for (const auto& [name, t] : ckpt.tensors) {
    std::vector<float> buf(t.data(), t.data() + t.numel());
    to_little_endian(buf);
    bf.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * 4));
  }
  if (!bf) throw IoError("failed writing " + (dir / kBlobName).string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir,
                           const std::string& expected_format) {
  const auto manifest_path = dir / kManifestName;
  std::ifstream mf(manifest_path, std::ios::binary);
  if (!mf) throw IoError("cannot open checkpoint manifest " + manifest_path.string());

  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid checkpoint manifest " + manifest_path.string() + ": " + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.format = manifest.at("format").get<std::string>();
    ckpt.meta = manifest.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid checkpoint manifest " + manifest_path.string() + ": " + e.what());
  }
  if (!expected_format.empty() && ckpt.format != expected_format) {
    throw IoError("checkpoint " + dir.string() + " has format '" + ckpt.format +
                  "', expected '" + expected_format + "'");
  }

  const auto blob_path = dir / manifest.value("blob", kBlobName);
  std::ifstream bf(blob_path, std::ios::binary);
  if (!bf) throw IoError("cannot open checkpoint blob " + blob_path.string());
  std::vector<char> blob((std::istreambuf_iterator<char>(bf)),
                         std::istreambuf_iterator<char>());

  try {
    for (const auto& entry : manifest.at("params")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<std::vector<int>>();
      const auto dtype = entry.at("dtype").get<std::string>();
      const auto offset = entry.at("offset").get<std::int64_t>();
      const auto count = entry.at("count").get<std::int64_t>();
      if (dtype != "float32") {
        throw IoError("checkpoint tensor '" + name + "' has unsupported dtype " + dtype);
      }
      if (count != Tensor<float>::numel_of(shape)) {
        throw IoError("checkpoint tensor '" + name + "' count does not match its shape");
      }
      if (offset < 0 || offset + count * 4 > static_cast<std::int64_t>(blob.size())) {
        throw IoError("checkpoint tensor '" + name + "' lies outside the blob");
      }
      Tensor<float> t(shape);
      std::vector<float> buf(static_cast<std::size_t>(count));
      std::memcpy(buf.data(), blob.data() + offset, static_cast<std::size_t>(count) * 4);
      to_little_endian(buf);  // symmetric swap on big-endian hosts
      std::copy(buf.begin(), buf.end(), t.data());
      ckpt.tensors.emplace_back(name, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid checkpoint manifest " + manifest_path.string() + ": " + e.what());
  }
  return ckpt;
}

}  // namespace latent_atlas
