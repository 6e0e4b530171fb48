#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "asymcycle/adam.hpp"
#include "asymcycle/buffer.hpp"
#include "asymcycle/losses.hpp"
#include "asymcycle/nets.hpp"
#include "asymcycle/phantom.hpp"
#include "asymcycle/rng.hpp"

namespace asymcycle {

struct TrainConfig {
  int epochs = 16;
  int batch_size = 1;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  int buffer_capacity = 50;
  LossConfig loss;
  bool augmentation = true;
  std::uint64_t seed = 1;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (learning_rate < 0.0) throw std::invalid_argument("TrainConfig: learning_rate must be >= 0");
    if (buffer_capacity < 0) throw std::invalid_argument("TrainConfig: buffer_capacity must be >= 0");
    loss.validate();
  }
};

struct ModelSeeds {
  std::uint64_t to_healthy = 1;
  std::uint64_t to_pathological = 2;
  std::uint64_t disc_pathological = 3;
  std::uint64_t disc_healthy = 4;
};

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Unpaired two-domain loader
// ---------------------------------------------------------------------------

/// Serves unpaired (x, y) batches. One epoch visits every slice of the larger
/// domain exactly once (fresh shuffle per epoch); the smaller domain is
/// cycled through reshuffled permutations, so its per-slice visit counts
/// never differ by more than one. The two domains draw from independent
/// random substreams.
template <typename T>
class UnpairedLoader {
 public:
  struct Batch {
    Tensor<T> x, y;  // normalized to [-1, 1]
    std::vector<int> x_indices, y_indices;
  };

  UnpairedLoader() = default;
  UnpairedLoader(std::vector<Tensor<T>> x_images, std::vector<Tensor<T>> y_images,
                 bool augmentation, int batch_size, std::uint64_t seed)
      : x_images_(std::move(x_images)),
        y_images_(std::move(y_images)),
        augmentation_(augmentation),
        batch_size_(batch_size),
        rng_x_(derive_seed(seed, "loader_x")),
        rng_y_(derive_seed(seed, "loader_y")) {
    if (x_images_.empty() || y_images_.empty())
      throw std::invalid_argument("UnpairedLoader: both domains must be non-empty");
    perm_x_.resize(x_images_.size());
    perm_y_.resize(y_images_.size());
    for (std::size_t i = 0; i < perm_x_.size(); ++i) perm_x_[i] = static_cast<int>(i);
    for (std::size_t i = 0; i < perm_y_.size(); ++i) perm_y_[i] = static_cast<int>(i);
    rng_x_.shuffle(perm_x_.begin(), perm_x_.end());
    rng_y_.shuffle(perm_y_.begin(), perm_y_.end());
  }

  int x_size() const { return static_cast<int>(x_images_.size()); }
  int y_size() const { return static_cast<int>(y_images_.size()); }
  bool y_is_larger() const { return y_images_.size() >= x_images_.size(); }
  int larger_size() const { return std::max(x_size(), y_size()); }
  int iterations_per_epoch() const {
    return (larger_size() + batch_size_ - 1) / batch_size_;
  }

  Batch next() {
    auto& lead_perm = y_is_larger() ? perm_y_ : perm_x_;
    auto& lead_rng = y_is_larger() ? rng_y_ : rng_x_;
    auto& follow_perm = y_is_larger() ? perm_x_ : perm_y_;
    auto& follow_rng = y_is_larger() ? rng_x_ : rng_y_;

    if (lead_pos_ == static_cast<int>(lead_perm.size())) {  // epoch boundary
      lead_rng.shuffle(lead_perm.begin(), lead_perm.end());
      lead_pos_ = 0;
    }
    const int remaining = static_cast<int>(lead_perm.size()) - lead_pos_;
    const int b = std::min(batch_size_, remaining);
    Batch batch;
    batch.x_indices.reserve(b);
    batch.y_indices.reserve(b);
    for (int i = 0; i < b; ++i) {
      const int lead_idx = lead_perm[lead_pos_++];
      if (follow_pos_ == static_cast<int>(follow_perm.size())) {
        follow_rng.shuffle(follow_perm.begin(), follow_perm.end());
        follow_pos_ = 0;
      }
      const int follow_idx = follow_perm[follow_pos_++];
      if (y_is_larger()) {
        batch.y_indices.push_back(lead_idx);
        batch.x_indices.push_back(follow_idx);
      } else {
        batch.x_indices.push_back(lead_idx);
        batch.y_indices.push_back(follow_idx);
      }
    }
    batch.x = assemble(x_images_, batch.x_indices, rng_x_);
    batch.y = assemble(y_images_, batch.y_indices, rng_y_);
    return batch;
  }

  // serialization hooks
  void save_state(std::ostream& os) const;
  void load_state(std::istream& is);

 private:
  Tensor<T> assemble(const std::vector<Tensor<T>>& images, const std::vector<int>& indices,
                     Rng& rng) {
    const auto& first = images[indices[0]];
    Tensor<T> out(static_cast<int>(indices.size()), 1, first.h(), first.w());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      Tensor<T> img = images[indices[i]];
      if (augmentation_) {
        const auto op = static_cast<AugmentOp>(rng.uniform_int(0, 5));
        img = augment(img, op);
      }
      for (int y = 0; y < img.h(); ++y)
        for (int x = 0; x < img.w(); ++x)
          out.at(static_cast<int>(i), 0, y, x) = T(2) * img.at(0, 0, y, x) - T(1);
    }
    return out;
  }

  std::vector<Tensor<T>> x_images_, y_images_;
  bool augmentation_ = true;
  int batch_size_ = 1;
  Rng rng_x_, rng_y_;
  std::vector<int> perm_x_, perm_y_;
  int lead_pos_ = 0;    // position in the larger domain's permutation
  int follow_pos_ = 0;  // position in the smaller domain's cycling permutation

 public:
  // exposed for state io
  friend struct LoaderStateAccess;
};

// ---------------------------------------------------------------------------
// Binary state io helpers
// ---------------------------------------------------------------------------

namespace detail {

struct BinWriter {
  std::ostream& os;
  void u32(std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
  void u64(std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
  void i64(std::int64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
  void f64(double v) { os.write(reinterpret_cast<const char*>(&v), 8); }
  void str(const std::string& s) {
    u64(s.size());
    os.write(s.data(), s.size());
  }
  template <typename T>
  void scalars(const T* p, std::size_t n) {
    os.write(reinterpret_cast<const char*>(p), n * sizeof(T));
  }
  template <typename T>
  void tensor(const Tensor<T>& t) {
    for (int d : t.shape()) u32(static_cast<std::uint32_t>(d));
    scalars(t.data(), t.size());
  }
  void ints(const std::vector<int>& v) {
    u64(v.size());
    scalars(v.data(), v.size());
  }
};

struct BinReader {
  std::istream& is;
  std::uint32_t u32() {
    std::uint32_t v;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
  }
  std::int64_t i64() {
    std::int64_t v;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
  }
  double f64() {
    double v;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
  }
  std::string str() {
    std::string s(u64(), '\0');
    is.read(s.data(), s.size());
    return s;
  }
  template <typename T>
  void scalars(T* p, std::size_t n) {
    is.read(reinterpret_cast<char*>(p), n * sizeof(T));
  }
  template <typename T>
  Tensor<T> tensor() {
    const int n = static_cast<int>(u32()), c = static_cast<int>(u32());
    const int h = static_cast<int>(u32()), w = static_cast<int>(u32());
    Tensor<T> t(n, c, h, w);
    scalars(t.data(), t.size());
    return t;
  }
  std::vector<int> ints() {
    std::vector<int> v(u64());
    scalars(v.data(), v.size());
    return v;
  }
};

}  // namespace detail

struct LoaderStateAccess {
  template <typename T>
  static void save(const UnpairedLoader<T>& l, detail::BinWriter& w) {
    w.str(l.rng_x_.serialize());
    w.str(l.rng_y_.serialize());
    w.ints(l.perm_x_);
    w.ints(l.perm_y_);
    w.i64(l.lead_pos_);
    w.i64(l.follow_pos_);
  }
  template <typename T>
  static void load(UnpairedLoader<T>& l, detail::BinReader& r) {
    l.rng_x_.deserialize(r.str());
    l.rng_y_.deserialize(r.str());
    l.perm_x_ = r.ints();
    l.perm_y_ = r.ints();
    l.lead_pos_ = static_cast<int>(r.i64());
    l.follow_pos_ = static_cast<int>(r.i64());
  }
};

template <typename T>
void UnpairedLoader<T>::save_state(std::ostream& os) const {
  detail::BinWriter w{os};
  LoaderStateAccess::save(*this, w);
}
template <typename T>
void UnpairedLoader<T>::load_state(std::istream& is) {
  detail::BinReader r{is};
  LoaderStateAccess::load(*this, r);
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

/// Runs the adversarial training loop for one fold: generator update (both
/// directions jointly), then the pathological-domain critic, then the
/// healthy-domain critic. In ASYMMETRIC mode the pathological-side
/// reconstruction is never built; the translated image itself is still
/// needed for the adversarial and identity terms.
template <typename T = float>
class CycleTrainer {
 public:
  CycleTrainer(ModelBundle<T>& bundle, UnpairedLoader<T> loader, const TrainConfig& cfg)
      : bundle_(&bundle),
        loader_(std::move(loader)),
        cfg_(cfg),
        buf_path_(cfg.buffer_capacity),
        buf_heal_(cfg.buffer_capacity),
        rng_buf_path_(derive_seed(cfg.seed, "buffer_x")),
        rng_buf_heal_(derive_seed(cfg.seed, "buffer_y")) {
    cfg.validate();
    std::vector<ParamTensor<T>*> gen_params;
    for (auto* p : bundle.to_healthy.params()) gen_params.push_back(p);
    for (auto* p : bundle.to_pathological.params()) gen_params.push_back(p);
    opt_gen_ = Adam<T>(gen_params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
    opt_disc_path_ = Adam<T>(bundle.disc_pathological.params(), cfg.learning_rate, cfg.adam_beta1,
                             cfg.adam_beta2);
    opt_disc_heal_ = Adam<T>(bundle.disc_healthy.params(), cfg.learning_rate, cfg.adam_beta1,
                             cfg.adam_beta2);
  }

  const TrainConfig& config() const { return cfg_; }
  UnpairedLoader<T>& loader() { return loader_; }
  ModelBundle<T>& bundle() { return *bundle_; }
  std::int64_t iteration() const { return iteration_; }
  int epochs_done() const { return epochs_done_; }
  const std::vector<LossBreakdown>& trajectory() const { return trajectory_; }

  /// One optimization step on explicit batches (normalized to [-1, 1]).
  LossBreakdown train_step(const Tensor<T>& x, const Tensor<T>& y) {
    const double w_c = cfg_.loss.w_c;
    const double gan_w = cfg_.loss.gan_weight;
    const double idt_w = cfg_.loss.effective_identity_weight();
    const bool symmetric = cfg_.loss.cycle_mode == CycleMode::SYMMETRIC;

    auto& gen_heal = bundle_->to_healthy;
    auto& gen_path = bundle_->to_pathological;
    auto& disc_heal = bundle_->disc_healthy;
    auto& disc_path = bundle_->disc_pathological;

    // ---- generator phase ----
    opt_gen_.zero_grad();

    nn::UNetTape<T> tape_heal_x, tape_path_y, tape_heal_cycle, tape_path_cycle;
    nn::UNetTape<T> tape_heal_idt, tape_path_idt;
    nn::DiscTape<T> tape_dh_fake, tape_dp_fake;

    Tensor<T> fake_y = gen_heal.forward(x, tape_heal_x);        // pseudo-healthy
    Tensor<T> fake_x = gen_path.forward(y, tape_path_y);        // pseudo-pathological
    Tensor<T> recon_y = gen_heal.forward(fake_x, tape_heal_cycle);
    Tensor<T> recon_x;
    if (symmetric) recon_x = gen_path.forward(fake_y, tape_path_cycle);
    Tensor<T> idt_y = gen_heal.forward(y, tape_heal_idt);
    Tensor<T> idt_x = gen_path.forward(x, tape_path_idt);

    Tensor<T> dec_fake_y = disc_heal.forward(fake_y, tape_dh_fake);
    Tensor<T> dec_fake_x = disc_path.forward(fake_x, tape_dp_fake);

    GeneratorLossParts parts;
    parts.adv_heal = gan_loss_generator(dec_fake_y);
    parts.adv_path = gan_loss_generator(dec_fake_x);
    parts.cycle = symmetric ? cycle_symmetric(recon_y, y, recon_x, x, w_c)
                            : cycle_asymmetric(recon_y, y, w_c);
    parts.identity = identity_loss(idt_y, y, idt_x, x, idt_w);
    LossBreakdown breakdown = total_generator_loss(parts, cfg_.loss);

    // adversarial gradients reach the generators through the critics without
    // touching critic parameters
    Tensor<T> d_fake_y =
        disc_heal.backward(tape_dh_fake, detail_loss_grad_to_one(dec_fake_y, gan_w), false);
    Tensor<T> d_fake_x =
        disc_path.backward(tape_dp_fake, detail_loss_grad_to_one(dec_fake_x, gan_w), false);

    {
      const auto d_recon_y = detail::l1_mean_grad(recon_y, y, symmetric ? w_c : 2.0 * w_c);
      const auto g = gen_heal.backward(tape_heal_cycle, d_recon_y, true);
      for (std::size_t i = 0; i < d_fake_x.size(); ++i) d_fake_x[i] += g[i];
    }
    if (symmetric) {
      const auto d_recon_x = detail::l1_mean_grad(recon_x, x, w_c);
      const auto g = gen_path.backward(tape_path_cycle, d_recon_x, true);
      for (std::size_t i = 0; i < d_fake_y.size(); ++i) d_fake_y[i] += g[i];
    }
    gen_heal.backward(tape_heal_idt, detail::l1_mean_grad(idt_y, y, idt_w), true);
    gen_path.backward(tape_path_idt, detail::l1_mean_grad(idt_x, x, idt_w), true);
    gen_heal.backward(tape_heal_x, d_fake_y, true);
    gen_path.backward(tape_path_y, d_fake_x, true);
    opt_gen_.step();

    // ---- critic phase: pathological first, then healthy ----
    breakdown.disc_path = critic_step(disc_path, opt_disc_path_, x, fake_x, buf_path_, rng_buf_path_);
    breakdown.disc_heal = critic_step(disc_heal, opt_disc_heal_, y, fake_y, buf_heal_, rng_buf_heal_);

    check_finite(breakdown);
    trajectory_.push_back(breakdown);
    ++iteration_;
    return breakdown;
  }

  /// Advances one loader batch.
  LossBreakdown step() {
    auto batch = loader_.next();
    return train_step(batch.x, batch.y);
  }

  /// Runs remaining epochs; on_epoch (if set) fires after each completed
  /// epoch and may return false to stop early (used for checkpoint hooks).
  void run(const std::function<bool(CycleTrainer&, int)>& on_epoch = {}) {
    const int iters = loader_.iterations_per_epoch();
    for (int e = epochs_done_; e < cfg_.epochs; ++e) {
      for (int i = 0; i < iters; ++i) step();
      ++epochs_done_;
      if (on_epoch && !on_epoch(*this, epochs_done_)) return;
    }
  }

  // ---- state io (exact resume) ----

  void save_state(const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    detail::BinWriter w{f};
    w.u32(0x54534341u);  // "ACST"
    w.u32(1);
    w.i64(iteration_);
    w.i64(epochs_done_);
    for (auto* p : bundle_->all_params()) w.tensor(p->value);
    save_adam(w, opt_gen_);
    save_adam(w, opt_disc_path_);
    save_adam(w, opt_disc_heal_);
    loader_.save_state(f);
    w.str(rng_buf_path_.serialize());
    w.str(rng_buf_heal_.serialize());
    save_buffer(w, buf_path_);
    save_buffer(w, buf_heal_);
    w.u64(trajectory_.size());
    for (const auto& row : trajectory_) {
      w.f64(row.adv_heal);
      w.f64(row.adv_path);
      w.f64(row.cycle);
      w.f64(row.identity);
      w.f64(row.total_generators);
      w.f64(row.disc_path);
      w.f64(row.disc_heal);
    }
    if (!f) throw std::runtime_error("short write: " + path.string());
  }

  void load_state(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path.string());
    detail::BinReader r{f};
    if (r.u32() != 0x54534341u || r.u32() != 1)
      throw std::runtime_error("bad trainer state: " + path.string());
    iteration_ = r.i64();
    epochs_done_ = static_cast<int>(r.i64());
    for (auto* p : bundle_->all_params()) {
      auto t = r.template tensor<T>();
      if (t.shape() != p->value.shape())
        throw std::runtime_error("trainer state shape mismatch: " + path.string());
      p->value = std::move(t);
    }
    load_adam(r, opt_gen_);
    load_adam(r, opt_disc_path_);
    load_adam(r, opt_disc_heal_);
    loader_.load_state(f);
    rng_buf_path_.deserialize(r.str());
    rng_buf_heal_.deserialize(r.str());
    load_buffer(r, buf_path_);
    load_buffer(r, buf_heal_);
    trajectory_.resize(r.u64());
    for (auto& row : trajectory_) {
      row.adv_heal = r.f64();
      row.adv_path = r.f64();
      row.cycle = r.f64();
      row.identity = r.f64();
      row.total_generators = r.f64();
      row.disc_path = r.f64();
      row.disc_heal = r.f64();
    }
    if (!f) throw std::runtime_error("truncated trainer state: " + path.string());
  }

  ImageBuffer<T>& pathological_buffer() { return buf_path_; }
  ImageBuffer<T>& healthy_buffer() { return buf_heal_; }

 private:
  static Tensor<T> detail_loss_grad_to_one(const Tensor<T>& decisions, double gan_weight) {
    return detail::sq_mean_to_grad(decisions, 1.0, gan_weight);
  }

  double critic_step(nn::PatchDiscriminator<T>& critic, Adam<T>& opt, const Tensor<T>& real,
                     const Tensor<T>& fake_fresh, ImageBuffer<T>& buffer, Rng& rng) {
    opt.zero_grad();
    const Tensor<T> fake = buffer.query(fake_fresh, rng);
    nn::DiscTape<T> tape_real, tape_fake;
    const Tensor<T> dec_real = critic.forward(real, tape_real);
    const Tensor<T> dec_fake = critic.forward(fake, tape_fake);
    const double loss = gan_loss_discriminator(dec_real, dec_fake);
    critic.backward(tape_real, detail::sq_mean_to_grad(dec_real, 1.0, 0.5), true);
    critic.backward(tape_fake, detail::sq_mean_to_grad(dec_fake, 0.0, 0.5), true);
    opt.step();
    return loss;
  }

  void check_finite(const LossBreakdown& b) const {
    const double vals[] = {b.adv_heal, b.adv_path,         b.cycle,    b.identity,
                           b.total_generators, b.disc_path, b.disc_heal};
    for (double v : vals)
      if (!std::isfinite(v))
        throw TrainingDiverged("non-finite loss at iteration " + std::to_string(iteration_));
  }

  static void save_adam(detail::BinWriter& w, Adam<T>& opt) {
    w.i64(opt.step_count());
    for (auto& m : opt.first_moments()) {
      w.u64(m.size());
      w.scalars(m.data(), m.size());
    }
    for (auto& v : opt.second_moments()) {
      w.u64(v.size());
      w.scalars(v.data(), v.size());
    }
  }
  static void load_adam(detail::BinReader& r, Adam<T>& opt) {
    opt.set_step_count(r.i64());
    for (auto& m : opt.first_moments()) {
      if (r.u64() != m.size()) throw std::runtime_error("adam state size mismatch");
      r.scalars(m.data(), m.size());
    }
    for (auto& v : opt.second_moments()) {
      if (r.u64() != v.size()) throw std::runtime_error("adam state size mismatch");
      r.scalars(v.data(), v.size());
    }
  }
  static void save_buffer(detail::BinWriter& w, ImageBuffer<T>& buf) {
    w.u64(buf.stored().size());
    for (const auto& t : buf.stored()) w.tensor(t);
  }
  static void load_buffer(detail::BinReader& r, ImageBuffer<T>& buf) {
    buf.stored().resize(r.u64());
    for (auto& t : buf.stored()) t = r.template tensor<T>();
  }

  ModelBundle<T>* bundle_;
  UnpairedLoader<T> loader_;
  TrainConfig cfg_;
  Adam<T> opt_gen_, opt_disc_path_, opt_disc_heal_;
  ImageBuffer<T> buf_path_, buf_heal_;
  Rng rng_buf_path_, rng_buf_heal_;
  std::int64_t iteration_ = 0;
  int epochs_done_ = 0;
  std::vector<LossBreakdown> trajectory_;
};

// ---------------------------------------------------------------------------
// Training-set selection and the full run
// ---------------------------------------------------------------------------

template <typename T = float>
struct TrainingSet {
  std::vector<Tensor<T>> x_images, y_images;  // [0,1] intensities
  std::vector<std::string> x_ids, y_ids;
};

/// Training slices for one fold: pathological slices of pathological patients
/// outside the held-out fold versus healthy slices of healthy patients
/// outside the held-out fold. Oracle twins never enter either domain.
template <typename T = float>
TrainingSet<T> training_domains(const Cohort& cohort, const FoldPlan& folds, int held_out_fold) {
  if (held_out_fold < 0 || held_out_fold >= folds.k)
    throw std::invalid_argument("training_domains: held_out_fold out of range");
  std::map<std::string, Severity> patient_severity;
  for (const auto& p : cohort.patients) patient_severity[p.id] = p.severity;

  TrainingSet<T> set;
  for (const auto& s : cohort.slices) {
    const auto it = folds.assignment.find(s.patient_id);
    if (it == folds.assignment.end())
      throw std::invalid_argument("training_domains: patient missing from fold plan: " + s.patient_id);
    if (it->second == held_out_fold) continue;
    if (s.oracle_twin) continue;
    const Severity patient_sev = patient_severity.at(s.patient_id);
    if (s.domain == Domain::PATHOLOGICAL) {
      set.x_images.push_back(s.pixels.template cast<T>());
      set.x_ids.push_back(s.id);
    } else if (patient_sev == Severity::HEALTHY) {
      set.y_images.push_back(s.pixels.template cast<T>());
      set.y_ids.push_back(s.id);
    }
  }
  if (set.x_images.empty() || set.y_images.empty())
    throw std::invalid_argument("training_domains: a fold removal left an empty training domain");
  return set;
}

template <typename T = float>
struct TrainRunOutput {
  ModelBundle<T> bundle;
  std::vector<LossBreakdown> trajectory;
};

/// Trains one (fold, config) cell from scratch and returns the final bundle
/// plus the per-iteration loss trajectory. Deterministic given all seeds.
template <typename T = float>
TrainRunOutput<T> train_run(const Cohort& cohort, const FoldPlan& folds, int held_out_fold,
                            const TrainConfig& cfg, const GeneratorSpec& gspec,
                            const DiscriminatorSpec& dspec, const ModelSeeds& seeds,
                            const TrainingFingerprint& fingerprint = {},
                            const std::function<bool(CycleTrainer<T>&, int)>& on_epoch = {}) {
  cfg.validate();
  auto set = training_domains<T>(cohort, folds, held_out_fold);

  TrainRunOutput<T> out;
  out.bundle = build_bundle<T>(gspec, dspec, seeds.to_healthy, seeds.to_pathological,
                               seeds.disc_pathological, seeds.disc_healthy);
  out.bundle.fingerprint = fingerprint;
  out.bundle.fingerprint.held_out_fold = held_out_fold;
  out.bundle.fingerprint.train_seed = cfg.seed;

  UnpairedLoader<T> loader(std::move(set.x_images), std::move(set.y_images), cfg.augmentation,
                           cfg.batch_size, cfg.seed);
  CycleTrainer<T> trainer(out.bundle, std::move(loader), cfg);
  trainer.run(on_epoch);
  out.trajectory = trainer.trajectory();
  return out;
}

// ---------------------------------------------------------------------------
// Loss trajectory log: plain text, one row per iteration. Scalars are printed
// with enough digits to round-trip doubles, so identical trajectories produce
// identical files.
// ---------------------------------------------------------------------------

inline void write_loss_log(const std::filesystem::path& path,
                           const std::vector<LossBreakdown>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "# iteration adv_heal adv_path cycle identity total_generators disc_path disc_heal\n";
  char buf[512];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    std::snprintf(buf, sizeof(buf), "%zu %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", i,
                  r.adv_heal, r.adv_path, r.cycle, r.identity, r.total_generators, r.disc_path,
                  r.disc_heal);
    f << buf;
  }
}

}  // namespace asymcycle
