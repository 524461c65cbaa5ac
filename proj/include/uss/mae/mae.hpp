#pragma once

// Masked-autoencoder spectrogram model: non-overlapping 16x16 time-mel
// patches, fixed 2-D sin-cos positional embeddings, a transformer encoder
// that sees only the visible patches during pretraining, and a lightweight
// transformer decoder fed encoded tokens plus a shared learnable mask token.
// The reconstruction loss covers masked patches only.

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "uss/autograd/conv_ops.hpp"
#include "uss/core/rng.hpp"
#include "uss/core/tensor.hpp"
#include "uss/nn/adam.hpp"
#include "uss/nn/transformer.hpp"

namespace uss::mae {

using ag::Var;

struct MaeConfig {
  int64_t patch_time = 16;
  int64_t patch_mel = 16;
  int64_t n_mels = 128;
  int64_t embed_dim = 64;   // paper scale: 768
  int64_t encoder_layers = 3;  // paper scale: 12
  int64_t decoder_layers = 2;  // paper scale: 8
  int64_t heads = 4;
  int64_t mlp_ratio = 4;
  double mask_ratio = 0.8;
  int64_t pooled_len = 32;

  void validate() const {
    check(patch_time >= 1 && patch_mel >= 1, "mae: patch dims must be >= 1");
    check(n_mels % patch_mel == 0, "mae: n_mels must be divisible by patch_mel");
    check(mask_ratio > 0.0 && mask_ratio < 1.0, "mae: mask_ratio must be in (0,1)");
    check(embed_dim % heads == 0, "mae: heads must divide embed_dim");
    check(embed_dim % 4 == 0, "mae: embed_dim must be a multiple of 4");
    check(pooled_len >= 1, "mae: pooled_len must be >= 1");
  }

  int64_t patch_dim() const { return patch_time * patch_mel; }

  nlohmann::json to_json() const {
    return {{"patch_time", patch_time},   {"patch_mel", patch_mel},
            {"n_mels", n_mels},           {"embed_dim", embed_dim},
            {"encoder_layers", encoder_layers},
            {"decoder_layers", decoder_layers},
            {"heads", heads},             {"mlp_ratio", mlp_ratio},
            {"mask_ratio", mask_ratio},   {"pooled_len", pooled_len}};
  }
  static MaeConfig from_json(const nlohmann::json& j) {
    MaeConfig c;
    c.patch_time = j.at("patch_time").get<int64_t>();
    c.patch_mel = j.at("patch_mel").get<int64_t>();
    c.n_mels = j.at("n_mels").get<int64_t>();
    c.embed_dim = j.at("embed_dim").get<int64_t>();
    c.encoder_layers = j.at("encoder_layers").get<int64_t>();
    c.decoder_layers = j.at("decoder_layers").get<int64_t>();
    c.heads = j.at("heads").get<int64_t>();
    c.mlp_ratio = j.at("mlp_ratio").get<int64_t>();
    c.mask_ratio = j.at("mask_ratio").get<double>();
    c.pooled_len = j.at("pooled_len").get<int64_t>();
    return c;
  }
};

// Lossless rearrangement of a (T, M) matrix into (P, patch_dim) rows,
// time-major: patch p = t_idx * mel_patches + m_idx.
template <typename T>
struct PatchGrid {
  Tensor<T> patches;
  int64_t time_patches = 0;
  int64_t mel_patches = 0;
  int64_t patch_count() const { return time_patches * mel_patches; }
};

template <typename T>
PatchGrid<T> patchify(const Tensor<T>& mel, const MaeConfig& cfg) {
  check(mel.rank() == 2, "patchify expects (T, M)");
  const int64_t M = mel.dim(1);
  check(M % cfg.patch_mel == 0,
        "patchify: mel bins " + std::to_string(M) + " not divisible by patch_mel");
  const int64_t T_in = mel.dim(0);
  const int64_t tp = (T_in + cfg.patch_time - 1) / cfg.patch_time;
  const int64_t mp = M / cfg.patch_mel;

  PatchGrid<T> grid;
  grid.time_patches = tp;
  grid.mel_patches = mp;
  grid.patches = Tensor<T>({tp * mp, cfg.patch_dim()});
  for (int64_t pt = 0; pt < tp; ++pt)
    for (int64_t pm = 0; pm < mp; ++pm) {
      T* dst = grid.patches.data() + (pt * mp + pm) * cfg.patch_dim();
      for (int64_t i = 0; i < cfg.patch_time; ++i)
        for (int64_t j = 0; j < cfg.patch_mel; ++j) {
          const int64_t t = pt * cfg.patch_time + i;
          const int64_t m = pm * cfg.patch_mel + j;
          dst[i * cfg.patch_mel + j] = t < T_in ? mel.at(t, m) : T(0);
        }
    }
  return grid;
}

template <typename T>
Tensor<T> unpatchify(const PatchGrid<T>& grid, const MaeConfig& cfg,
                     int64_t out_frames) {
  Tensor<T> mel({out_frames, grid.mel_patches * cfg.patch_mel});
  for (int64_t pt = 0; pt < grid.time_patches; ++pt)
    for (int64_t pm = 0; pm < grid.mel_patches; ++pm) {
      const T* src = grid.patches.data() + (pt * grid.mel_patches + pm) * cfg.patch_dim();
      for (int64_t i = 0; i < cfg.patch_time; ++i)
        for (int64_t j = 0; j < cfg.patch_mel; ++j) {
          const int64_t t = pt * cfg.patch_time + i;
          if (t < out_frames) mel.at(t, pm * cfg.patch_mel + j) = src[i * cfg.patch_mel + j];
        }
    }
  return mel;
}

// Fixed 2-D sin-cos positional table: half the channels encode the time
// index, half the mel index.
template <typename T>
Tensor<T> sincos_pos_embed(int64_t time_patches, int64_t mel_patches,
                           int64_t dim) {
  const int64_t half = dim / 2, quarter = dim / 4;
  Tensor<T> pos({time_patches * mel_patches, dim});
  for (int64_t pt = 0; pt < time_patches; ++pt)
    for (int64_t pm = 0; pm < mel_patches; ++pm) {
      T* row = pos.data() + (pt * mel_patches + pm) * dim;
      for (int64_t i = 0; i < quarter; ++i) {
        const double omega =
            1.0 / std::pow(10000.0, static_cast<double>(i) / quarter);
        row[2 * i] = static_cast<T>(std::sin(pt * omega));
        row[2 * i + 1] = static_cast<T>(std::cos(pt * omega));
        row[half + 2 * i] = static_cast<T>(std::sin(pm * omega));
        row[half + 2 * i + 1] = static_cast<T>(std::cos(pm * omega));
      }
    }
  return pos;
}

struct MaskSplit {
  std::vector<int64_t> visible, masked;
};

// Uniform draw without replacement of round(ratio * P) masked patches,
// deterministic under the rng state; both index lists are sorted.
inline MaskSplit random_mask(int64_t patch_count, double mask_ratio, Rng& rng) {
  check(mask_ratio > 0.0 && mask_ratio < 1.0, "random_mask: ratio must be in (0,1)");
  const int64_t n_masked = static_cast<int64_t>(
      std::llround(mask_ratio * static_cast<double>(patch_count)));
  std::vector<int64_t> idx(static_cast<size_t>(patch_count));
  for (int64_t i = 0; i < patch_count; ++i) idx[static_cast<size_t>(i)] = i;
  rng.shuffle(idx);
  MaskSplit split;
  split.masked.assign(idx.begin(), idx.begin() + n_masked);
  split.visible.assign(idx.begin() + n_masked, idx.end());
  std::sort(split.masked.begin(), split.masked.end());
  std::sort(split.visible.begin(), split.visible.end());
  return split;
}

// Per-spectrogram standardization; the statistics come from the input alone,
// so they stay constants in any training graph.
template <typename T>
Tensor<T> standardize(const Tensor<T>& x) {
  double mean = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) mean += x[i];
  mean /= std::max<int64_t>(1, x.size());
  double var = 0.0;
  for (int64_t i = 0; i < x.size(); ++i)
    var += (x[i] - mean) * (x[i] - mean);
  var /= std::max<int64_t>(1, x.size());
  const double inv = 1.0 / (std::sqrt(var) + 1e-6);
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < x.size(); ++i)
    out[i] = static_cast<T>((x[i] - mean) * inv);
  return out;
}

enum class SslStrategy { kFrozen, kUpdated };

inline SslStrategy parse_strategy(const std::string& s) {
  if (s == "frozen") return SslStrategy::kFrozen;
  if (s == "updated") return SslStrategy::kUpdated;
  throw Error("unknown SSL strategy '" + s + "' (expected frozen|updated)");
}

template <typename T>
struct SslFeatures {
  Tensor<T> sequence;                   // (L, D)
  std::vector<Tensor<T>> layer_outputs;  // per encoder layer, (L, D)
};

template <typename T>
class MaeModel {
public:
  MaeModel() = default;
  MaeModel(const MaeConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    patch_embed_ = nn::Linear<T>("mae.patch_embed", cfg.patch_dim(),
                                 cfg.embed_dim, rng, nn::Init::kXavier);
    for (int64_t l = 0; l < cfg.encoder_layers; ++l)
      encoder_.emplace_back("mae.enc" + std::to_string(l), cfg.embed_dim,
                            cfg.heads, cfg.mlp_ratio, rng);
    enc_norm_ = nn::LayerNorm<T>("mae.enc_norm", cfg.embed_dim);
    mask_token_ = {"mae.mask_token", Tensor<T>({1, cfg.embed_dim})};
    for (int64_t i = 0; i < cfg.embed_dim; ++i)
      mask_token_.value[i] = static_cast<T>(rng.normal() * 0.02);
    dec_embed_ = nn::Linear<T>("mae.dec_embed", cfg.embed_dim, cfg.embed_dim,
                               rng, nn::Init::kXavier);
    for (int64_t l = 0; l < cfg.decoder_layers; ++l)
      decoder_.emplace_back("mae.dec" + std::to_string(l), cfg.embed_dim,
                            cfg.heads, cfg.mlp_ratio, rng);
    dec_norm_ = nn::LayerNorm<T>("mae.dec_norm", cfg.embed_dim);
    head_ = nn::Linear<T>("mae.head", cfg.embed_dim, cfg.patch_dim(), rng,
                          nn::Init::kXavier);
    layer_weights_ = {"mae.layer_weights", Tensor<T>({1, cfg.encoder_layers})};
  }

  const MaeConfig& config() const { return cfg_; }

  void collect(nn::ParamRefs<T>& out) {
    collect_encoder(out);
    out.push_back(&mask_token_);
    dec_embed_.collect(out);
    for (auto& b : decoder_) b.collect(out);
    dec_norm_.collect(out);
    head_.collect(out);
    out.push_back(&layer_weights_);
  }

  // Encoder-side parameters, the set frozen or updated downstream.
  void collect_encoder(nn::ParamRefs<T>& out) {
    patch_embed_.collect(out);
    for (auto& b : encoder_) b.collect(out);
    enc_norm_.collect(out);
  }

  ag::Parameter<T>& layer_weights() { return layer_weights_; }
  nn::Linear<T>& reconstruction_head() { return head_; }

  // Deterministic checksum of encoder parameters (frozen-contract checks).
  double encoder_checksum() {
    nn::ParamRefs<T> params;
    collect_encoder(params);
    double acc = 0.0;
    int64_t k = 1;
    for (const auto* p : params)
      for (int64_t i = 0; i < p->value.size(); ++i)
        acc += static_cast<double>(p->value[i]) * std::sin(0.001 * (k++ % 9973));
    return acc;
  }

  // Encoder forward over the given token rows (already standardized,
  // patchified and gathered). Returns per-block outputs.
  std::vector<Var<T>> encode(const Var<T>& tokens, const Var<T>& pos,
                             bool frozen) {
    auto h = ag::add(patch_embed_(tokens, frozen), pos);
    std::vector<Var<T>> outs;
    outs.reserve(encoder_.size());
    for (auto& block : encoder_) {
      h = block(h, frozen);
      outs.push_back(h);
    }
    return outs;
  }

  // One reconstruction step over a batch of raw log-mel spectrograms.
  // Returns the batch loss; gradients go through the supplied optimizer.
  double pretrain_step(const std::vector<Tensor<T>>& mels, nn::Adam<T>& opt,
                       Rng& rng) {
    check(!mels.empty(), "mae: empty pretraining batch");
    std::vector<Var<T>> losses;
    for (const auto& mel_raw : mels) {
      const Tensor<T> mel = standardize(mel_raw);
      const PatchGrid<T> grid = patchify(mel, cfg_);
      const int64_t P = grid.patch_count();
      MaskSplit split = random_mask(P, cfg_.mask_ratio, rng);
      const Tensor<T> pos =
          sincos_pos_embed<T>(grid.time_patches, grid.mel_patches, cfg_.embed_dim);

      // encoder sees only visible patches
      Tensor<T> vis_tokens({static_cast<int64_t>(split.visible.size()), cfg_.patch_dim()});
      Tensor<T> vis_pos({static_cast<int64_t>(split.visible.size()), cfg_.embed_dim});
      for (size_t r = 0; r < split.visible.size(); ++r) {
        std::memcpy(vis_tokens.data() + r * cfg_.patch_dim(),
                    grid.patches.data() + split.visible[r] * cfg_.patch_dim(),
                    sizeof(T) * static_cast<size_t>(cfg_.patch_dim()));
        std::memcpy(vis_pos.data() + r * cfg_.embed_dim,
                    pos.data() + split.visible[r] * cfg_.embed_dim,
                    sizeof(T) * static_cast<size_t>(cfg_.embed_dim));
      }
      auto encoded = enc_norm_(
          encode(ag::constant(std::move(vis_tokens), "input"),
                 ag::constant(std::move(vis_pos), "pos"), false)
              .back(),
          false);

      // decoder: encoded visible tokens plus shared mask tokens, reordered to
      // the original patch positions, plus decoder positional embeddings
      auto mask_tok = ag::tile_rows(ag::leaf(mask_token_),
                                    static_cast<int64_t>(split.masked.size()));
      auto full = ag::concat_rows<T>({dec_embed_(encoded, false), mask_tok});
      std::vector<int64_t> order(static_cast<size_t>(P));
      for (size_t r = 0; r < split.visible.size(); ++r)
        order[static_cast<size_t>(split.visible[r])] = static_cast<int64_t>(r);
      for (size_t r = 0; r < split.masked.size(); ++r)
        order[static_cast<size_t>(split.masked[r])] =
            static_cast<int64_t>(split.visible.size() + r);
      auto h = ag::add(ag::gather_rows(full, order), ag::constant(pos, "dec_pos"));
      for (auto& block : decoder_) h = block(h, false);
      auto pred = head_(dec_norm_(h, false), false);

      // loss on masked patches only
      Tensor<T> target({static_cast<int64_t>(split.masked.size()), cfg_.patch_dim()});
      for (size_t r = 0; r < split.masked.size(); ++r)
        std::memcpy(target.data() + r * cfg_.patch_dim(),
                    grid.patches.data() + split.masked[r] * cfg_.patch_dim(),
                    sizeof(T) * static_cast<size_t>(cfg_.patch_dim()));
      losses.push_back(ag::mse_loss(ag::gather_rows(pred, split.masked), target));
    }
    Var<T> total = losses[0];
    for (size_t i = 1; i < losses.size(); ++i) total = ag::add(total, losses[i]);
    auto loss = ag::scale(total, static_cast<T>(1.0 / losses.size()));
    auto grads = ag::backward(loss);
    nn::ParamRefs<T> params;
    collect(params);
    opt.step(params, grads);
    return static_cast<double>(loss->value[0]);
  }

  // Feature extraction with every patch visible. Frozen: final encoder layer
  // output with gradients blocked. Updated: softmax-weighted sum over all
  // layer outputs as a graph value (plus the plain tensors for inspection).
  struct Extraction {
    Var<T> sequence;       // graph value; constant when frozen
    int64_t time_patches = 0;
    int64_t mel_patches = 0;
  };

  Extraction extract(const Tensor<T>& mel_raw, SslStrategy strategy) {
    const Tensor<T> mel = standardize(mel_raw);
    const PatchGrid<T> grid = patchify(mel, cfg_);
    const Tensor<T> pos =
        sincos_pos_embed<T>(grid.time_patches, grid.mel_patches, cfg_.embed_dim);
    const bool frozen = strategy == SslStrategy::kFrozen;
    auto outs = encode(ag::constant(grid.patches, "input"),
                       ag::constant(pos, "pos"), frozen);
    Extraction ex;
    ex.time_patches = grid.time_patches;
    ex.mel_patches = grid.mel_patches;
    if (frozen) {
      auto final_out = enc_norm_(outs.back(), true);
      ex.sequence = ag::constant(final_out->value, "ssl_frozen");
    } else {
      auto weights = ag::softmax_rows(ag::leaf(layer_weights_));
      Var<T> acc;
      for (size_t l = 0; l < outs.size(); ++l) {
        auto term = ag::mul_scalar_var(
            outs[l], ag::slice_cols(weights, static_cast<int64_t>(l), 1));
        acc = l == 0 ? term : ag::add(acc, term);
      }
      ex.sequence = acc;
    }
    return ex;
  }

  SslFeatures<T> extract_features(const Tensor<T>& mel_raw, SslStrategy strategy) {
    const Tensor<T> mel = standardize(mel_raw);
    const PatchGrid<T> grid = patchify(mel, cfg_);
    const Tensor<T> pos =
        sincos_pos_embed<T>(grid.time_patches, grid.mel_patches, cfg_.embed_dim);
    auto outs = encode(ag::constant(grid.patches, "input"),
                       ag::constant(pos, "pos"), true);
    SslFeatures<T> f;
    for (const auto& o : outs) f.layer_outputs.push_back(o->value);
    if (strategy == SslStrategy::kFrozen) {
      f.sequence = enc_norm_(outs.back(), true)->value;
    } else {
      Tensor<T> w = layer_weights_.value;
      // softmax over the layer axis
      T mx = w[0];
      for (int64_t i = 1; i < w.size(); ++i) mx = std::max(mx, w[i]);
      T sum = T(0);
      for (int64_t i = 0; i < w.size(); ++i) {
        w[i] = std::exp(w[i] - mx);
        sum += w[i];
      }
      f.sequence = Tensor<T>(outs[0]->value.shape());
      for (int64_t l = 0; l < w.size(); ++l) {
        const T wl = w[l] / sum;
        const Tensor<T>& o = outs[static_cast<size_t>(l)]->value;
        for (int64_t i = 0; i < f.sequence.size(); ++i)
          f.sequence[i] += wl * o[i];
      }
    }
    return f;
  }

private:
  MaeConfig cfg_;
  nn::Linear<T> patch_embed_;
  std::vector<nn::TransformerBlock<T>> encoder_;
  nn::LayerNorm<T> enc_norm_;
  ag::Parameter<T> mask_token_;
  nn::Linear<T> dec_embed_;
  std::vector<nn::TransformerBlock<T>> decoder_;
  nn::LayerNorm<T> dec_norm_;
  nn::Linear<T> head_;
  ag::Parameter<T> layer_weights_;
};

// (L, D) -> (pooled_len, D): windowed (mean + max) / 2, zero-padded tail.
template <typename T>
Var<T> average_max_pool(const Var<T>& seq, int64_t pooled_len) {
  return ag::row_pool_meanmax(seq, pooled_len);
}

// (L', D) -> (target_T, D): tile the whole pooled sequence and truncate.
template <typename T>
Var<T> duplicate_to_frames(const Var<T>& pooled, int64_t target_frames) {
  return ag::tile_rows(pooled, target_frames);
}

}  // namespace uss::mae
