#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "asymcycle/layers.hpp"
#include "asymcycle/rng.hpp"
#include "asymcycle/tensor.hpp"

namespace asymcycle {

enum class Norm { INSTANCE, NONE };

struct GeneratorSpec {
  int depth = 3;          // number of 2x down/up-sampling levels
  int base_channels = 8;  // channels of the full-resolution stem
  Norm norm = Norm::INSTANCE;
  double init_std = 0.02;

  void validate() const {
    if (depth < 2) throw std::invalid_argument("GeneratorSpec: depth must be >= 2");
    if (base_channels < 1) throw std::invalid_argument("GeneratorSpec: base_channels must be >= 1");
  }
  bool operator==(const GeneratorSpec&) const = default;
};

struct DiscriminatorSpec {
  int n_layers = 3;        // strided conv blocks
  int base_channels = 16;
  double init_std = 0.02;

  void validate() const {
    if (n_layers < 2) throw std::invalid_argument("DiscriminatorSpec: n_layers must be >= 2");
    if (base_channels < 1)
      throw std::invalid_argument("DiscriminatorSpec: base_channels must be >= 1");
  }
  bool operator==(const DiscriminatorSpec&) const = default;
};

namespace nn {

inline int level_channels(int base, int level) {
  int c = base;
  for (int l = 0; l < level; ++l) c = std::min(2 * c, 8 * base);
  return c;
}

// ---------------------------------------------------------------------------
// U-Net generator: full-resolution stem, strided-conv encoder, nearest-up
// decoder with skip concatenation at every level, tanh output head.
// ---------------------------------------------------------------------------

template <typename T>
struct UNetTape {
  Conv2dCache<T> stem_conv;
  InstanceNormCache<T> stem_norm;
  ActCache<T> stem_act;
  std::vector<Conv2dCache<T>> down_conv;
  std::vector<InstanceNormCache<T>> down_norm;
  std::vector<ActCache<T>> down_act;
  std::vector<Tensor<T>> skips;  // activations kept for concatenation, levels 0..depth-1
  std::vector<Conv2dCache<T>> up_conv;
  std::vector<InstanceNormCache<T>> up_norm;
  std::vector<ActCache<T>> up_act;
  std::vector<std::array<int, 2>> concat_ch;  // (upsampled, skip) channel split
  Conv2dCache<T> head_conv;
  ActCache<T> head_act;
};

template <typename T>
class UNet {
 public:
  UNet() = default;
  explicit UNet(const GeneratorSpec& spec, const std::string& name = "unet") : spec_(spec) {
    spec.validate();
    const int b = spec.base_channels;
    const bool bias = spec.norm == Norm::NONE;  // instance norm absorbs conv biases
    stem_ = Conv2d<T>(1, b, 3, 1, 1, name + ".stem", bias);
    for (int l = 1; l <= spec.depth; ++l) {
      const int cin = level_channels(b, l - 1);
      const int cout = level_channels(b, l);
      downs_.emplace_back(cin, cout, 4, 2, 1, name + ".down" + std::to_string(l), bias);
    }
    for (int l = spec.depth; l >= 1; --l) {
      const int c_low = level_channels(b, l);      // channels arriving from below
      const int c_skip = level_channels(b, l - 1); // skip at the target resolution
      ups_.emplace_back(c_low + c_skip, c_skip, 3, 1, 1, name + ".up" + std::to_string(l), bias);
    }
    head_ = Conv2d<T>(b, 1, 3, 1, 1, name + ".head", true);
  }

  void init(Rng& rng) {
    stem_.init(rng, spec_.init_std);
    for (auto& d : downs_) d.init(rng, spec_.init_std);
    for (auto& u : ups_) u.init(rng, spec_.init_std);
    head_.init(rng, spec_.init_std);
  }

  const GeneratorSpec& spec() const { return spec_; }

  void check_input(const Tensor<T>& x) const {
    if (x.c() != 1) throw std::invalid_argument("UNet: expected single-channel input");
    if (x.h() != x.w()) throw std::invalid_argument("UNet: expected square input");
    const int div = 1 << spec_.depth;
    if (x.h() % div != 0 || x.h() / div < 1)
      throw std::invalid_argument("UNet: image size not divisible by 2^depth");
  }

  Tensor<T> forward(const Tensor<T>& x, UNetTape<T>& tape) const {
    check_input(x);
    const bool use_norm = spec_.norm == Norm::INSTANCE;
    tape.down_conv.resize(spec_.depth);
    tape.down_norm.resize(spec_.depth);
    tape.down_act.resize(spec_.depth);
    tape.up_conv.resize(spec_.depth);
    tape.up_norm.resize(spec_.depth);
    tape.up_act.resize(spec_.depth);
    tape.skips.resize(spec_.depth);
    tape.concat_ch.resize(spec_.depth);

    Tensor<T> cur = stem_.forward(x, tape.stem_conv);
    if (use_norm) cur = instance_norm_forward(cur, tape.stem_norm);
    cur = act_forward(cur, Act::RELU, tape.stem_act);

    for (int l = 0; l < spec_.depth; ++l) {
      tape.skips[l] = cur;
      cur = downs_[l].forward(cur, tape.down_conv[l]);
      if (use_norm) cur = instance_norm_forward(cur, tape.down_norm[l]);
      cur = act_forward(cur, Act::LRELU, tape.down_act[l]);
    }

    for (int i = 0; i < spec_.depth; ++i) {
      const int skip_level = spec_.depth - 1 - i;
      Tensor<T> up = upsample2x_forward(cur);
      tape.concat_ch[i] = {up.c(), tape.skips[skip_level].c()};
      cur = concat_channels(up, tape.skips[skip_level]);
      cur = ups_[i].forward(cur, tape.up_conv[i]);
      if (use_norm) cur = instance_norm_forward(cur, tape.up_norm[i]);
      cur = act_forward(cur, Act::RELU, tape.up_act[i]);
    }

    cur = head_.forward(cur, tape.head_conv);
    return act_forward(cur, Act::TANH, tape.head_act);
  }

  /// Backpropagates dL/dy; accumulates parameter gradients when accum is set
  /// and returns dL/dx.
  Tensor<T> backward(const UNetTape<T>& tape, const Tensor<T>& dy, bool accum) {
    const bool use_norm = spec_.norm == Norm::INSTANCE;
    Tensor<T> g = act_backward(tape.head_act, dy);
    g = head_.backward(tape.head_conv, g, accum);

    std::vector<Tensor<T>> skip_grads(spec_.depth);
    for (int i = spec_.depth - 1; i >= 0; --i) {
      const int skip_level = spec_.depth - 1 - i;
      g = act_backward(tape.up_act[i], g);
      if (use_norm) g = instance_norm_backward(tape.up_norm[i], g);
      g = ups_[i].backward(tape.up_conv[i], g, accum);
      Tensor<T> d_up(g.n(), tape.concat_ch[i][0], g.h(), g.w());
      Tensor<T> d_skip(g.n(), tape.concat_ch[i][1], g.h(), g.w());
      split_channels(g, d_up, d_skip);
      skip_grads[skip_level] = std::move(d_skip);
      g = upsample2x_backward(d_up);
    }

    for (int l = spec_.depth - 1; l >= 0; --l) {
      g = act_backward(tape.down_act[l], g);
      if (use_norm) g = instance_norm_backward(tape.down_norm[l], g);
      g = downs_[l].backward(tape.down_conv[l], g, accum);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += skip_grads[l][i];
    }

    g = act_backward(tape.stem_act, g);
    if (use_norm) g = instance_norm_backward(tape.stem_norm, g);
    return stem_.backward(tape.stem_conv, g, accum);
  }

  std::vector<ParamTensor<T>*> params() {
    std::vector<ParamTensor<T>*> out;
    stem_.collect_params(out);
    for (auto& d : downs_) d.collect_params(out);
    for (auto& u : ups_) u.collect_params(out);
    head_.collect_params(out);
    return out;
  }

 private:
  GeneratorSpec spec_;
  Conv2d<T> stem_;
  std::vector<Conv2d<T>> downs_;
  std::vector<Conv2d<T>> ups_;
  Conv2d<T> head_;
};

// ---------------------------------------------------------------------------
// Patch discriminator: strided conv pyramid ending in a real-valued decision
// grid strictly smaller than the input.
// ---------------------------------------------------------------------------

template <typename T>
struct DiscTape {
  std::vector<Conv2dCache<T>> conv;
  std::vector<InstanceNormCache<T>> norm;
  std::vector<ActCache<T>> act;
  Conv2dCache<T> head_conv;
};

template <typename T>
class PatchDiscriminator {
 public:
  PatchDiscriminator() = default;
  explicit PatchDiscriminator(const DiscriminatorSpec& spec, const std::string& name = "disc")
      : spec_(spec) {
    spec.validate();
    const int b = spec.base_channels;
    for (int l = 0; l < spec.n_layers; ++l) {
      const int cin = l == 0 ? 1 : level_channels(b, l - 1);
      const int cout = level_channels(b, l);
      // the first block is not normalized and keeps its bias
      blocks_.emplace_back(cin, cout, 4, 2, 1, name + ".block" + std::to_string(l), l == 0);
    }
    head_ = Conv2d<T>(level_channels(b, spec.n_layers - 1), 1, 4, 1, 1, name + ".head", true);
  }

  void init(Rng& rng) {
    for (auto& blk : blocks_) blk.init(rng, spec_.init_std);
    head_.init(rng, spec_.init_std);
  }

  const DiscriminatorSpec& spec() const { return spec_; }

  /// Decision-grid side length for a given input size; throws when the spec
  /// collapses the grid to nothing.
  int grid_size(int input_size) const {
    int s = input_size;
    for (int l = 0; l < spec_.n_layers; ++l) s = (s + 2 * 1 - 4) / 2 + 1;
    s = (s + 2 * 1 - 4) / 1 + 1;
    if (s < 1) throw std::invalid_argument("PatchDiscriminator: decision grid is empty");
    if (s >= input_size)
      throw std::invalid_argument("PatchDiscriminator: receptive field too small");
    return s;
  }

  Tensor<T> forward(const Tensor<T>& x, DiscTape<T>& tape) const {
    grid_size(x.h());
    tape.conv.resize(spec_.n_layers);
    tape.norm.resize(spec_.n_layers);
    tape.act.resize(spec_.n_layers);
    Tensor<T> cur = x;
    for (int l = 0; l < spec_.n_layers; ++l) {
      cur = blocks_[l].forward(cur, tape.conv[l]);
      if (l > 0) cur = instance_norm_forward(cur, tape.norm[l]);  // first block stays raw
      cur = act_forward(cur, Act::LRELU, tape.act[l]);
    }
    return head_.forward(cur, tape.head_conv);
  }

  Tensor<T> backward(const DiscTape<T>& tape, const Tensor<T>& dy, bool accum) {
    Tensor<T> g = head_.backward(tape.head_conv, dy, accum);
    for (int l = spec_.n_layers - 1; l >= 0; --l) {
      g = act_backward(tape.act[l], g);
      if (l > 0) g = instance_norm_backward(tape.norm[l], g);
      g = blocks_[l].backward(tape.conv[l], g, accum);
    }
    return g;
  }

  std::vector<ParamTensor<T>*> params() {
    std::vector<ParamTensor<T>*> out;
    for (auto& blk : blocks_) blk.collect_params(out);
    head_.collect_params(out);
    return out;
  }

 private:
  DiscriminatorSpec spec_;
  std::vector<Conv2d<T>> blocks_;
  Conv2d<T> head_;
};

}  // namespace nn

// ---------------------------------------------------------------------------
// Builders, translate, bundle
// ---------------------------------------------------------------------------

template <typename T = float>
nn::UNet<T> build_generator(const GeneratorSpec& spec, std::uint64_t seed,
                            const std::string& name = "unet") {
  nn::UNet<T> net(spec, name);
  Rng rng(seed);
  net.init(rng);
  return net;
}

template <typename T = float>
nn::PatchDiscriminator<T> build_discriminator(const DiscriminatorSpec& spec, std::uint64_t seed,
                                              const std::string& name = "disc") {
  nn::PatchDiscriminator<T> net(spec, name);
  Rng rng(seed);
  net.init(rng);
  return net;
}

/// Pure forward mapping for images already in model range [-1, 1].
template <typename T>
Tensor<T> translate(const nn::UNet<T>& generator, const Tensor<T>& image) {
  nn::UNetTape<T> tape;
  return generator.forward(image, tape);
}

/// Identifies what a bundle was trained on so evaluation can refuse
/// train/test leakage.
struct TrainingFingerprint {
  std::uint64_t cohort_hash = 0;   // FNV-1a of the cohort manifest
  std::uint64_t config_hash = 0;   // experiment/train config hash
  std::uint64_t train_seed = 0;
  int held_out_fold = -1;

  bool operator==(const TrainingFingerprint&) const = default;
};

template <typename T = float>
struct ModelBundle {
  GeneratorSpec gen_spec;
  DiscriminatorSpec disc_spec;
  nn::UNet<T> to_healthy;          // maps pathological -> pseudo-healthy
  nn::UNet<T> to_pathological;     // inverse direction
  nn::PatchDiscriminator<T> disc_healthy;
  nn::PatchDiscriminator<T> disc_pathological;
  TrainingFingerprint fingerprint;

  std::vector<ParamTensor<T>*> all_params() {
    std::vector<ParamTensor<T>*> out;
    for (auto* p : to_healthy.params()) out.push_back(p);
    for (auto* p : to_pathological.params()) out.push_back(p);
    for (auto* p : disc_healthy.params()) out.push_back(p);
    for (auto* p : disc_pathological.params()) out.push_back(p);
    return out;
  }
};

template <typename T = float>
ModelBundle<T> build_bundle(const GeneratorSpec& gspec, const DiscriminatorSpec& dspec,
                            std::uint64_t seed_f, std::uint64_t seed_g, std::uint64_t seed_dx,
                            std::uint64_t seed_dy) {
  ModelBundle<T> b;
  b.gen_spec = gspec;
  b.disc_spec = dspec;
  b.to_healthy = build_generator<T>(gspec, seed_f, "to_healthy");
  b.to_pathological = build_generator<T>(gspec, seed_g, "to_pathological");
  b.disc_pathological = build_discriminator<T>(dspec, seed_dx, "disc_pathological");
  b.disc_healthy = build_discriminator<T>(dspec, seed_dy, "disc_healthy");
  return b;
}

// ---------------------------------------------------------------------------
// Checkpoint format: a JSON header (specs, fingerprint, parameter table of
// name -> shape -> byte offset) followed by raw little-endian float32 data.
// Round-trips bit-exactly.
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kBundleMagic[4] = {'A', 'C', 'B', 'N'};

inline nlohmann::ordered_json spec_to_json(const GeneratorSpec& s) {
  return {{"depth", s.depth},
          {"base_channels", s.base_channels},
          {"norm", s.norm == Norm::INSTANCE ? "instance" : "none"},
          {"init_std", s.init_std}};
}

inline GeneratorSpec generator_spec_from_json(const nlohmann::ordered_json& j) {
  GeneratorSpec s;
  s.depth = j.at("depth").get<int>();
  s.base_channels = j.at("base_channels").get<int>();
  s.norm = j.at("norm").get<std::string>() == "instance" ? Norm::INSTANCE : Norm::NONE;
  s.init_std = j.at("init_std").get<double>();
  return s;
}

inline nlohmann::ordered_json spec_to_json(const DiscriminatorSpec& s) {
  return {{"n_layers", s.n_layers}, {"base_channels", s.base_channels}, {"init_std", s.init_std}};
}

inline DiscriminatorSpec discriminator_spec_from_json(const nlohmann::ordered_json& j) {
  DiscriminatorSpec s;
  s.n_layers = j.at("n_layers").get<int>();
  s.base_channels = j.at("base_channels").get<int>();
  s.init_std = j.at("init_std").get<double>();
  return s;
}

}  // namespace detail

template <typename T>
void save_bundle(ModelBundle<T>& bundle, const std::filesystem::path& path) {
  nlohmann::ordered_json header;
  header["generator_spec"] = detail::spec_to_json(bundle.gen_spec);
  header["discriminator_spec"] = detail::spec_to_json(bundle.disc_spec);
  header["fingerprint"] = {{"cohort_hash", bundle.fingerprint.cohort_hash},
                           {"config_hash", bundle.fingerprint.config_hash},
                           {"train_seed", bundle.fingerprint.train_seed},
                           {"held_out_fold", bundle.fingerprint.held_out_fold}};
  nlohmann::ordered_json table = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  auto params = bundle.all_params();
  for (auto* p : params) {
    table.push_back({{"name", p->name},
                     {"shape", p->value.shape()},
                     {"offset", offset}});
    offset += p->value.size() * sizeof(float);
  }
  header["parameters"] = table;
  const std::string htext = header.dump();
  const std::uint64_t hsize = htext.size();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(detail::kBundleMagic, 4);
  const std::uint32_t version = 1;
  f.write(reinterpret_cast<const char*>(&version), 4);
  f.write(reinterpret_cast<const char*>(&hsize), 8);
  f.write(htext.data(), htext.size());
  for (auto* p : params) {
    if constexpr (std::is_same_v<T, float>) {
      f.write(reinterpret_cast<const char*>(p->value.data()), p->value.size() * sizeof(float));
    } else {
      const auto as_float = p->value.template cast<float>();
      f.write(reinterpret_cast<const char*>(as_float.data()), as_float.size() * sizeof(float));
    }
  }
  if (!f) throw std::runtime_error("short write: " + path.string());
}

template <typename T = float>
ModelBundle<T> load_bundle(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t hsize = 0;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&version), 4);
  f.read(reinterpret_cast<char*>(&hsize), 8);
  if (!f || std::memcmp(magic, detail::kBundleMagic, 4) != 0 || version != 1)
    throw std::runtime_error("bad checkpoint: " + path.string());
  std::string htext(hsize, '\0');
  f.read(htext.data(), hsize);
  const auto header = nlohmann::ordered_json::parse(htext);

  const auto gspec = detail::generator_spec_from_json(header.at("generator_spec"));
  const auto dspec = detail::discriminator_spec_from_json(header.at("discriminator_spec"));
  ModelBundle<T> bundle = build_bundle<T>(gspec, dspec, 0, 0, 0, 0);
  const auto& fp = header.at("fingerprint");
  bundle.fingerprint.cohort_hash = fp.at("cohort_hash").get<std::uint64_t>();
  bundle.fingerprint.config_hash = fp.at("config_hash").get<std::uint64_t>();
  bundle.fingerprint.train_seed = fp.at("train_seed").get<std::uint64_t>();
  bundle.fingerprint.held_out_fold = fp.at("held_out_fold").get<int>();

  auto params = bundle.all_params();
  const auto& table = header.at("parameters");
  if (table.size() != params.size())
    throw std::runtime_error("checkpoint parameter table mismatch: " + path.string());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (table[i].at("name").get<std::string>() != params[i]->name)
      throw std::runtime_error("checkpoint parameter order mismatch: " + path.string());
    std::vector<float> buf(params[i]->value.size());
    f.read(reinterpret_cast<char*>(buf.data()), buf.size() * sizeof(float));
    for (std::size_t j = 0; j < buf.size(); ++j) params[i]->value[j] = static_cast<T>(buf[j]);
  }
  if (!f) throw std::runtime_error("truncated checkpoint: " + path.string());
  return bundle;
}

}  // namespace asymcycle
