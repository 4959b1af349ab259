#pragma once

#include <cstdint>
#include <type_traits>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "scalenet/net/model.hpp"

namespace scalenet::net {

/// Optimizer slot saved with a checkpoint so training can resume exactly.
template <typename T>
struct AdamStateSnapshot {
  int64_t step = 0;
  int64_t epochs_completed = 0;
  std::vector<std::pair<std::string, Tensor<T>>> first_moment;
  std::vector<std::pair<std::string, Tensor<T>>> second_moment;
};

/// Checkpoint container: "SCNETCK1" magic, a little-endian u32 JSON header
/// length, the JSON header (shapes, architecture, offsets), then all tensor
/// payloads as little-endian float64. Stable across scalar instantiations.
namespace ckpt {

inline constexpr char kMagic[8] = {'S', 'C', 'N', 'E', 'T', 'C', 'K', '1'};

template <typename T>
void append_tensor(nlohmann::json& list, std::vector<double>& payload, const std::string& name, const Tensor<T>& t) {
  nlohmann::json e;
  e["name"] = name;
  e["shape"] = t.shape;
  e["offset"] = payload.size();
  list.push_back(e);
  for (const T& x : t.v) payload.push_back(static_cast<double>(x));
}

template <typename T>
void read_tensor(const nlohmann::json& e, const std::vector<double>& payload, Tensor<T>& out) {
  const std::vector<int> shape = e.at("shape").get<std::vector<int>>();
  if (shape != out.shape) throw std::runtime_error("checkpoint: shape mismatch for " + e.at("name").get<std::string>());
  const size_t off = e.at("offset").get<size_t>();
  if (off + out.v.size() > payload.size()) throw std::runtime_error("checkpoint: payload truncated");
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = static_cast<T>(payload[off + i]);
}

}  // namespace ckpt

template <typename T>
void save_checkpoint(const std::string& path, const ScaleRatioNet<T>& model,
                     std::type_identity_t<const AdamStateSnapshot<T>*> optimizer = nullptr,
                     std::optional<double> final_loss = std::nullopt) {
  const auto& opts = model.options();
  nlohmann::json h;
  h["format"] = 1;
  h["input_resolution"] = opts.input_resolution;
  h["use_covisibility_attention"] = opts.use_covisibility_attention;
  h["encoder"] = {{"id", to_string(opts.encoder.id)},
                  {"output_channels", opts.encoder.output_channels},
                  {"downsampling_stride", opts.encoder.downsampling_stride}};
  h["regressor"] = {{"conv_channels", opts.regressor_conv_channels}, {"fc_width", opts.regressor_fc_width}};
  if (final_loss) h["final_loss"] = *final_loss;

  std::vector<double> payload;
  h["tensors"] = nlohmann::json::array();
  for (const std::string& name : model.params().names())
    ckpt::append_tensor(h["tensors"], payload, name, model.params().value(name));

  if (optimizer) {
    h["optimizer"] = {{"step", optimizer->step},
                      {"epochs_completed", optimizer->epochs_completed},
                      {"m", nlohmann::json::array()},
                      {"v", nlohmann::json::array()}};
    for (const auto& [name, t] : optimizer->first_moment) ckpt::append_tensor(h["optimizer"]["m"], payload, name, t);
    for (const auto& [name, t] : optimizer->second_moment) ckpt::append_tensor(h["optimizer"]["v"], payload, name, t);
  }

  const std::string header = h.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(ckpt::kMagic, sizeof(ckpt::kMagic));
  const uint32_t len = static_cast<uint32_t>(header.size());
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  f.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(double)));
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

template <typename T>
struct LoadedCheckpoint {
  ScaleRatioNet<T> model;
  std::optional<AdamStateSnapshot<T>> optimizer;
  std::optional<double> final_loss;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, ckpt::kMagic, 8) != 0) throw std::runtime_error("not a checkpoint file: " + path);
  uint32_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string header(len, '\0');
  f.read(header.data(), len);
  if (!f) throw std::runtime_error("checkpoint header truncated: " + path);
  const nlohmann::json h = nlohmann::json::parse(header);

  std::vector<double> payload;
  {
    std::vector<char> rest((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    payload.resize(rest.size() / sizeof(double));
    std::memcpy(payload.data(), rest.data(), payload.size() * sizeof(double));
  }

  typename ScaleRatioNet<T>::Options opts;
  opts.input_resolution = h.at("input_resolution").get<int>();
  opts.use_covisibility_attention = h.at("use_covisibility_attention").get<bool>();
  opts.encoder.id = encoder_id_from_string(h.at("encoder").at("id").get<std::string>());
  opts.encoder.output_channels = h.at("encoder").at("output_channels").get<int>();
  opts.encoder.downsampling_stride = h.at("encoder").at("downsampling_stride").get<int>();
  opts.regressor_conv_channels = h.at("regressor").at("conv_channels").get<int>();
  opts.regressor_fc_width = h.at("regressor").at("fc_width").get<int>();

  LoadedCheckpoint<T> out{ScaleRatioNet<T>::create(opts, /*seed=*/0), std::nullopt, std::nullopt};
  for (const auto& e : h.at("tensors"))
    ckpt::read_tensor(e, payload, out.model.params().value(e.at("name").get<std::string>()));

  if (h.contains("optimizer")) {
    AdamStateSnapshot<T> st;
    st.step = h["optimizer"].at("step").get<int64_t>();
    st.epochs_completed = h["optimizer"].value("epochs_completed", int64_t{0});
    for (const auto& e : h["optimizer"].at("m")) {
      Tensor<T> t(e.at("shape").get<std::vector<int>>());
      ckpt::read_tensor(e, payload, t);
      st.first_moment.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
    for (const auto& e : h["optimizer"].at("v")) {
      Tensor<T> t(e.at("shape").get<std::vector<int>>());
      ckpt::read_tensor(e, payload, t);
      st.second_moment.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
    out.optimizer = std::move(st);
  }
  if (h.contains("final_loss")) out.final_loss = h["final_loss"].get<double>();
  return out;
}

}  // namespace scalenet::net
