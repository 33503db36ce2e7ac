#include "attnlreg/model/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace alr::model {

namespace {

constexpr std::array<char, 4> kMagic{'A', 'T', 'L', 'R'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<unsigned char, 4> b{static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                       static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw InvalidArgument(std::string("checkpoint truncated reading ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const ModelParams<float>& params, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InvalidArgument("cannot write checkpoint '" + path.string() + "'");
  os.write(kMagic.data(), kMagic.size());
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(params.all().size()));
  for (const auto& p : params.all()) {
    put_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_u32(os, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.dims()) put_u32(os, static_cast<std::uint32_t>(d));
    for (float v : p.value.data()) put_u32(os, std::bit_cast<std::uint32_t>(v));
  }
  if (!os) throw InvalidArgument("failed writing checkpoint '" + path.string() + "'");
}

ModelParams<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidArgument("cannot open checkpoint '" + path.string() + "'");
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kMagic) throw InvalidArgument("'" + path.string() + "' is not an ATLR checkpoint");
  const std::uint32_t version = get_u32(is, "version");
  if (version != kCheckpointVersion) throw InvalidArgument("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = get_u32(is, "array count");
  ModelParams<float> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get_u32(is, "name length");
    if (name_len > 4096) throw InvalidArgument("checkpoint array name too long");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw InvalidArgument("checkpoint truncated reading name");
    const std::uint32_t rank = get_u32(is, "rank");
    if (rank < 1 || rank > 8) throw InvalidArgument("checkpoint array '" + name + "' has invalid rank");
    Dims dims(rank);
    for (auto& d : dims) d = get_u32(is, "dims");
    Array<float> value(dims);
    for (float& v : value.data()) v = std::bit_cast<float>(get_u32(is, "values"));
    params.add(std::move(name), std::move(value));
  }
  return params;
}

std::filesystem::path config_sidecar_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p.replace_extension(".json");
  return p;
}

void save_config(const ModelConfig& config, const std::filesystem::path& checkpoint, const nlohmann::json& extra) {
  nlohmann::json j = extra.is_object() ? extra : nlohmann::json::object();
  j["model"] = to_json(config);
  j["format_version"] = kCheckpointVersion;
  std::ofstream os(config_sidecar_path(checkpoint));
  if (!os) throw InvalidArgument("cannot write config sidecar for '" + checkpoint.string() + "'");
  os << j.dump(2) << '\n';
}

ModelConfig load_config(const std::filesystem::path& checkpoint) {
  const auto path = config_sidecar_path(checkpoint);
  std::ifstream is(path);
  if (!is) throw InvalidArgument("missing config sidecar '" + path.string() + "'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("config sidecar '" + path.string() + "' is not valid JSON: " + e.what());
  }
  if (!j.contains("model")) throw InvalidArgument("config sidecar lacks the 'model' field");
  return model_config_from_json(j.at("model"));
}

void check_compatible(const ModelConfig& config, const ModelParams<float>& params) {
  Rng rng(0);
  const ModelParams<float> expected = init_params<float>(config, rng);
  for (const auto& p : expected.all()) {
    if (!params.contains(p.name)) throw InvalidArgument("checkpoint lacks parameter '" + p.name + "' required by config");
    const auto& dims = params[p.name].value.dims();
    if (dims != p.value.dims()) {
      throw InvalidArgument("parameter '" + p.name + "' has dims " + dims_to_string(dims) + " but config implies " +
                            dims_to_string(p.value.dims()));
    }
  }
  if (params.all().size() != expected.all().size()) {
    for (const auto& p : params.all()) {
      if (!expected.contains(p.name)) throw InvalidArgument("checkpoint parameter '" + p.name + "' is not used by config");
    }
  }
}

}  // namespace alr::model
