#pragma once

#include <cmath>
#include <string>

#include "scalenet/core/image.hpp"
#include "scalenet/core/rng.hpp"
#include "scalenet/net/params.hpp"
#include "scalenet/net/tape.hpp"

namespace scalenet::net {

enum class EncoderId { small_random, pretrained_deep };

inline std::string to_string(EncoderId id) {
  return id == EncoderId::small_random ? "small-random" : "pretrained-deep";
}

inline EncoderId encoder_id_from_string(const std::string& s) {
  if (s == "small-random") return EncoderId::small_random;
  if (s == "pretrained-deep") return EncoderId::pretrained_deep;
  throw std::invalid_argument("unknown encoder id: " + s);
}

struct EncoderConfig {
  EncoderId id = EncoderId::small_random;
  int output_channels = 128;
  int downsampling_stride = 16;

  void validate() const {
    if (output_channels < 8) throw std::invalid_argument("EncoderConfig: output_channels must be >= 8");
    if (downsampling_stride < 1) throw std::invalid_argument("EncoderConfig: stride must be positive");
  }
};

namespace detail {

template <typename T>
Tensor<T> he_conv_init(int kh, int kw, int ic, int oc, Rng& rng) {
  Tensor<T> w({kh, kw, ic, oc});
  const double std = std::sqrt(2.0 / (kh * kw * ic));
  for (auto& x : w.v) x = static_cast<T>(rng.normal(0.0, std));
  return w;
}

}  // namespace detail

/// Dense feature extractor over a single image. Parameters live in a shared
/// ParamStore under the "encoder." prefix; the graph consumes the image
/// centered around zero.
template <typename T>
class Encoder {
 public:
  Encoder() = default;
  explicit Encoder(EncoderConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  const EncoderConfig& config() const { return cfg_; }

  void register_params(ParamStore<T>& store, Rng& rng) const {
    if (cfg_.id == EncoderId::small_random) {
      const int c = cfg_.output_channels;
      const int widths[5] = {3, 12, 24, 48, c};
      for (int i = 0; i < 4; ++i) {
        store.add(conv_name(i, 'w'), detail::he_conv_init<T>(3, 3, widths[i], widths[i + 1], rng));
        store.add(conv_name(i, 'b'), Tensor<T>({widths[i + 1]}));
      }
    } else {
      store.add("encoder.stem.w", detail::he_conv_init<T>(7, 7, 3, 64, rng));
      store.add("encoder.stem.b", Tensor<T>({64}));
      const int stage_c[4] = {64, 64, 128, 256};
      for (int s = 1; s <= 3; ++s) {
        for (int b = 0; b < 2; ++b) {
          const int in_c = (b == 0) ? stage_c[s - 1] : stage_c[s];
          const std::string p = block_prefix(s, b);
          store.add(p + ".c0.w", detail::he_conv_init<T>(3, 3, in_c, stage_c[s], rng));
          store.add(p + ".c0.b", Tensor<T>({stage_c[s]}));
          store.add(p + ".c1.w", detail::he_conv_init<T>(3, 3, stage_c[s], stage_c[s], rng));
          store.add(p + ".c1.b", Tensor<T>({stage_c[s]}));
          if (b == 0 && s > 1) {
            store.add(p + ".proj.w", detail::he_conv_init<T>(1, 1, in_c, stage_c[s], rng));
            store.add(p + ".proj.b", Tensor<T>({stage_c[s]}));
          }
        }
      }
    }
  }

  typename Tape<T>::Var forward(Tape<T>& tape, TapeBinding<T>& params, const Image& img) const {
    auto x = tape.input(image_to_tensor<T>(img, T(-0.5)));
    if (cfg_.id == EncoderId::small_random) {
      for (int i = 0; i < 4; ++i)
        x = tape.relu(tape.conv2d(x, params(conv_name(i, 'w')), params(conv_name(i, 'b')), 2, 1));
      return x;
    }
    x = tape.relu(tape.conv2d(x, params("encoder.stem.w"), params("encoder.stem.b"), 2, 3));
    x = tape.maxpool2d(x, 3, 2, 1);
    for (int s = 1; s <= 3; ++s) {
      for (int b = 0; b < 2; ++b) {
        const std::string p = block_prefix(s, b);
        const int stride = (b == 0 && s > 1) ? 2 : 1;
        auto y = tape.relu(tape.conv2d(x, params(p + ".c0.w"), params(p + ".c0.b"), stride, 1));
        y = tape.conv2d(y, params(p + ".c1.w"), params(p + ".c1.b"), 1, 1);
        auto skip = x;
        if (stride != 1) skip = tape.conv2d(x, params(p + ".proj.w"), params(p + ".proj.b"), 2, 0);
        x = tape.relu(tape.add(y, skip));
      }
    }
    return x;
  }

 private:
  static std::string conv_name(int i, char kind) {
    return "encoder.conv" + std::to_string(i) + (kind == 'w' ? ".w" : ".b");
  }
  static std::string block_prefix(int stage, int block) {
    return "encoder.s" + std::to_string(stage) + "b" + std::to_string(block);
  }

  EncoderConfig cfg_;
};

}  // namespace scalenet::net
