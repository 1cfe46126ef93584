#include "stainqc/checkpoint.hpp"

#include <cstdio>
#include <cstring>

#include "stainqc/errors.hpp"

namespace stainqc {

using nlohmann::json;

namespace {
constexpr char kMagic[4] = {'S', 'Q', 'C', 'K'};
constexpr uint32_t kVersion = 1;
} // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  json header;
  header["meta"] = ck.meta;
  header["tensors"] = json::array();
  for (const auto& [name, mat] : ck.tensors)
    header["tensors"].push_back(
        {{"name", name}, {"rows", mat.rows()}, {"cols", mat.cols()}});
  const std::string hbytes = header.dump();

  std::filesystem::create_directories(path.parent_path());
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot create checkpoint: " + path.string());
  auto put = [&](const void* p, size_t n) {
    if (std::fwrite(p, 1, n, f) != n) {
      std::fclose(f);
      throw IoError("short write: " + path.string());
    }
  };
  put(kMagic, 4);
  put(&kVersion, 4);
  const uint64_t hlen = hbytes.size();
  put(&hlen, 8);
  put(hbytes.data(), hbytes.size());
  const size_t pad = (8 - (16 + hbytes.size()) % 8) % 8;
  const char zeros[8] = {};
  put(zeros, pad);
  for (const auto& [name, mat] : ck.tensors)
    put(mat.data(), sizeof(float) * mat.size());
  std::fclose(f);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open checkpoint: " + path.string());
  auto get = [&](void* p, size_t n) {
    if (std::fread(p, 1, n, f) != n) {
      std::fclose(f);
      throw IoError("truncated checkpoint: " + path.string());
    }
  };
  char magic[4];
  uint32_t version;
  uint64_t hlen;
  get(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    std::fclose(f);
    throw IoError("not a checkpoint file: " + path.string());
  }
  get(&version, 4);
  if (version != kVersion) {
    std::fclose(f);
    throw IoError("unsupported checkpoint version: " + path.string());
  }
  get(&hlen, 8);
  std::string hbytes(hlen, '\0');
  get(hbytes.data(), hlen);
  const size_t pad = (8 - (16 + hlen) % 8) % 8;
  char skip[8];
  get(skip, pad);

  Checkpoint ck;
  json header;
  try {
    header = json::parse(hbytes);
    ck.meta = header.at("meta");
  } catch (const json::exception& e) {
    std::fclose(f);
    throw IoError("bad checkpoint header " + path.string() + ": " + e.what());
  }
  for (const auto& t : header.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const Eigen::Index rows = t.at("rows").get<Eigen::Index>();
    const Eigen::Index cols = t.at("cols").get<Eigen::Index>();
    nn::MatX<float> mat(rows, cols);
    get(mat.data(), sizeof(float) * mat.size());
    ck.tensors.emplace(name, std::move(mat));
  }
  std::fclose(f);
  return ck;
}

} // namespace stainqc
