#include "compose/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "compose/errors.hpp"

namespace compose {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {
constexpr char kMagic[8] = {'C', 'M', 'P', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const PlacementNet& net, const std::filesystem::path& path, const nlohmann::json& metadata) {
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    const auto& t = net.parameters()[i];
    tensors.push_back({{"name", net.parameter_names()[i]}, {"shape", t.shape()}, {"offset", offset}, {"count", t.size()}});
    offset += t.size();
  }
  const nlohmann::json header{{"network", net.config()},
                              {"seed", net.seed()},
                              {"dtype", "float64-le"},
                              {"tensors", tensors},
                              {"metadata", metadata}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const std::uint64_t header_size = text.size();
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
  out.write(reinterpret_cast<const char*>(&header_size), sizeof header_size);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : net.parameters()) {
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t header_size = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&header_size), sizeof header_size);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw IoError(path.string() + " is not a placement-net checkpoint");
  }
  if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  if (header_size > (std::uint64_t{1} << 30)) throw IoError("corrupt checkpoint header size");
  std::string text(header_size, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_size));
  if (!in) throw IoError("truncated checkpoint header in " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header: " + std::string(e.what()));
  }
  if (header.value("dtype", "") != "float64-le") throw IoError("unsupported checkpoint dtype");

  PlacementNet net(header.at("network").get<NetworkConfig>(), header.at("seed").get<std::uint64_t>());
  const auto& table = header.at("tensors");
  if (table.size() != net.parameters().size()) throw IoError("checkpoint tensor count does not match network");
  const auto data_start = in.tellg();
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& entry = table[i];
    auto& t = net.parameter(entry.at("name").get<std::string>());
    if (entry.at("shape").get<std::vector<int>>() != t.shape()) {
      throw IoError("checkpoint tensor " + entry.at("name").get<std::string>() + " has the wrong shape");
    }
    const auto offset = entry.at("offset").get<std::uint64_t>();
    in.seekg(data_start + static_cast<std::streamoff>(offset * sizeof(double)));
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw IoError("truncated checkpoint data in " + path.string());
  }
  return {std::move(net), header.value("metadata", nlohmann::json::object())};
}

}  // namespace compose
