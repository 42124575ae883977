#pragma once

// T2VP parameter files: magic "T2VP", version u16=1, a length-prefixed
// UTF-8 JSON config block, then the 64-bit little-endian parameter values
// in layout declaration order. Kept separate from encoder.hpp so the JSON
// dependency stays out of the core headers.

#include <string>

#include "json.hpp"
#include "t2v/detail/binio.hpp"
#include "t2v/encoder.hpp"

namespace t2v {

namespace detail {

inline nlohmann::json config_to_json(const EncoderConfig& config) {
  nlohmann::json j;
  j["kind"] = config.kind == EncoderKind::conv ? "conv" : "mlp";
  j["embed_dim"] = config.embed_dim;
  j["init_seed"] = config.init_seed;
  j["softmax_classes"] = config.softmax_classes;
  if (config.kind == EncoderKind::conv) {
    j["tile_size"] = config.tile_size;
    j["bands"] = config.bands;
    nlohmann::json blocks = nlohmann::json::array();
    for (const ConvBlock& block : config.blocks)
      blocks.push_back({{"channels", block.out_channels},
                        {"residual", block.residual}});
    j["blocks"] = blocks;
  } else {
    j["in_dim"] = config.in_dim;
    j["hidden_dim"] = config.hidden_dim;
  }
  if (config.input_stats) {
    j["input_stats"] = {{"mean", config.input_stats->mean},
                        {"stddev", config.input_stats->stddev}};
  }
  return j;
}

inline EncoderConfig config_from_json(const nlohmann::json& j,
                                      const std::string& context) {
  EncoderConfig config;
  try {
    const std::string kind = j.at("kind").get<std::string>();
    config.embed_dim = j.at("embed_dim").get<int>();
    config.init_seed = j.at("init_seed").get<std::uint64_t>();
    config.softmax_classes = j.value("softmax_classes", 0);
    if (kind == "conv") {
      config.kind = EncoderKind::conv;
      config.tile_size = j.at("tile_size").get<int>();
      config.bands = j.at("bands").get<int>();
      config.blocks.clear();
      for (const auto& block : j.at("blocks"))
        config.blocks.push_back(ConvBlock{block.at("channels").get<int>(),
                                          block.at("residual").get<bool>()});
    } else if (kind == "mlp") {
      config.kind = EncoderKind::mlp;
      config.in_dim = j.at("in_dim").get<int>();
      config.hidden_dim = j.at("hidden_dim").get<int>();
      config.blocks.clear();
      config.tile_size = 0;
      config.bands = 0;
    } else {
      throw DataError(context + ": unknown encoder kind \"" + kind + "\"");
    }
    if (j.contains("input_stats")) {
      BandStats stats;
      stats.mean = j["input_stats"].at("mean").get<std::vector<double>>();
      stats.stddev = j["input_stats"].at("stddev").get<std::vector<double>>();
      config.input_stats = std::move(stats);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(context + ": malformed config block: " + e.what());
  }
  config.validate();
  return config;
}

}  // namespace detail

template <typename T = double>
std::string serialize_params(const EncoderParams<T>& params,
                             const EncoderConfig& config) {
  const ParamLayout layout = param_layout(config);
  if (params.values.size() != layout.total)
    throw UsageError("parameter count does not match encoder config");
  const std::string json_text = detail::config_to_json(config).dump();
  std::string out;
  out.reserve(10 + json_text.size() + params.values.size() * 8);
  out.append("T2VP", 4);
  detail::put_u16(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(json_text.size()));
  out += json_text;
  for (const T v : params.values)
    detail::put_f64(out, static_cast<double>(v));
  return out;
}

template <typename T = double>
void save_params(const EncoderParams<T>& params, const EncoderConfig& config,
                 const std::string& path) {
  detail::write_file_bytes(path, serialize_params(params, config));
}

inline std::pair<EncoderParams<double>, EncoderConfig> load_params(
    const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  detail::ByteReader r(bytes, path);
  r.expect_magic("T2VP");
  const std::uint16_t version = r.u16("version");
  if (version != 1)
    throw DataError(path + ": unsupported version " +
                    std::to_string(version));
  const std::uint32_t json_len = r.u32("config length");
  std::string json_text(json_len, '\0');
  r.read_raw(json_text.data(), json_len, "config block");
  nlohmann::json j = nlohmann::json::parse(json_text, nullptr, false);
  if (j.is_discarded())
    throw DataError(path + ": config block is not valid JSON");
  const EncoderConfig config = detail::config_from_json(j, path);

  const ParamLayout layout = param_layout(config);
  if (r.remaining() != layout.total * 8)
    throw DataError(path + ": file holds " +
                    std::to_string(r.remaining() / 8) +
                    " parameter values, config declares " +
                    std::to_string(layout.total));
  EncoderParams<double> params;
  params.values.resize(layout.total);
  for (std::size_t i = 0; i < layout.total; ++i)
    params.values[i] = r.f64("parameters");
  return {std::move(params), config};
}

}  // namespace t2v
