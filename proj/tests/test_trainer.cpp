#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "asymcycle/buffer.hpp"
#include "asymcycle/phantom.hpp"
#include "asymcycle/trainer.hpp"

using namespace asymcycle;

namespace {

CohortConfig tiny_config() {
  CohortConfig cfg;
  cfg.image_size = 32;
  cfg.n_healthy_patients = 2;
  cfg.n_moderate_patients = 2;
  cfg.n_severe_patients = 2;
  cfg.slices_per_patient = 2;
  cfg.seed = 9;
  return cfg;
}

GeneratorSpec tiny_gen() {
  GeneratorSpec g;
  g.depth = 2;
  g.base_channels = 2;
  return g;
}

DiscriminatorSpec tiny_disc() {
  DiscriminatorSpec d;
  d.n_layers = 2;
  d.base_channels = 2;
  return d;
}

TrainConfig tiny_train(CycleMode mode, double w_c, int epochs = 2) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.learning_rate = 1e-4;
  cfg.buffer_capacity = 4;
  cfg.loss.cycle_mode = mode;
  cfg.loss.w_c = w_c;
  cfg.seed = 77;
  return cfg;
}

std::vector<Tensor<float>> random_images(int n, int size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor<float>> out;
  for (int i = 0; i < n; ++i) {
    Tensor<float> t(1, 1, size, size);
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = float(rng.uniform());
    out.push_back(std::move(t));
  }
  return out;
}

bool rows_equal(const LossBreakdown& a, const LossBreakdown& b) {
  return a.adv_heal == b.adv_heal && a.adv_path == b.adv_path && a.cycle == b.cycle &&
         a.identity == b.identity && a.total_generators == b.total_generators &&
         a.disc_path == b.disc_path && a.disc_heal == b.disc_heal;
}

std::vector<std::vector<float>> snapshot(ModelBundle<float>& b) {
  std::vector<std::vector<float>> out;
  for (auto* p : b.all_params())
    out.emplace_back(p->value.data(), p->value.data() + p->value.size());
  return out;
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

// ---------------------------------------------------------------------------
// loader
// ---------------------------------------------------------------------------

TEST_CASE("loader: one epoch visits every slice of the larger domain exactly once") {
  auto xs = random_images(5, 8, 1);
  auto ys = random_images(8, 8, 2);
  UnpairedLoader<float> loader(xs, ys, false, 1, 3);
  REQUIRE(loader.iterations_per_epoch() == 8);

  const int epochs = 3;
  std::vector<int> x_visits(5, 0), y_visits(8, 0);
  for (int e = 0; e < epochs; ++e)
    for (int i = 0; i < loader.iterations_per_epoch(); ++i) {
      const auto batch = loader.next();
      REQUIRE(batch.x_indices.size() == 1);
      x_visits[batch.x_indices[0]] += 1;
      y_visits[batch.y_indices[0]] += 1;
    }
  for (int v : y_visits) CHECK(v == epochs);
  const int lo = *std::min_element(x_visits.begin(), x_visits.end());
  const int hi = *std::max_element(x_visits.begin(), x_visits.end());
  CHECK(hi - lo <= 1);  // smaller domain resampled evenly
}

TEST_CASE("loader: batches larger than one still cover each epoch exactly") {
  auto xs = random_images(4, 8, 4);
  auto ys = random_images(7, 8, 5);
  UnpairedLoader<float> loader(xs, ys, true, 3, 6);
  REQUIRE(loader.iterations_per_epoch() == 3);  // ceil(7 / 3)
  std::vector<int> y_visits(7, 0);
  int total = 0;
  for (int i = 0; i < 3; ++i) {
    const auto batch = loader.next();
    total += static_cast<int>(batch.y_indices.size());
    for (int idx : batch.y_indices) y_visits[idx] += 1;
    CHECK(batch.x.n() == static_cast<int>(batch.x_indices.size()));
    for (std::size_t j = 0; j < batch.x.size(); ++j) {
      CHECK(batch.x[j] >= -1.f);
      CHECK(batch.x[j] <= 1.f);
    }
  }
  CHECK(total == 7);
  for (int v : y_visits) CHECK(v == 1);
}

TEST_CASE("loader: pair alignment stays at chance level") {
  const int n = 6;
  auto xs = random_images(n, 8, 7);
  auto ys = random_images(n, 8, 8);
  UnpairedLoader<float> loader(xs, ys, false, 1, 11);
  const int epochs = 500;
  int aligned = 0, draws = 0;
  for (int e = 0; e < epochs; ++e)
    for (int i = 0; i < loader.iterations_per_epoch(); ++i) {
      const auto batch = loader.next();
      aligned += batch.x_indices[0] == batch.y_indices[0];
      ++draws;
    }
  const double expected = double(draws) / n;
  const double sigma = std::sqrt(draws * (1.0 / n) * (1.0 - 1.0 / n));
  CHECK(std::abs(aligned - expected) <= 3.0 * sigma);
}

TEST_CASE("training domains exclude oracle twins and held-out patients") {
  const auto cohort = generate_cohort(tiny_config());
  const auto folds = make_folds(cohort.patients, 2, 5);
  const auto set = training_domains<float>(cohort, folds, 0);

  std::set<std::string> twin_ids;
  for (const auto& s : cohort.slices)
    if (s.oracle_twin) twin_ids.insert(s.id);

  for (const auto& id : set.x_ids) CHECK_FALSE(twin_ids.count(id));
  for (const auto& id : set.y_ids) {
    CHECK_FALSE(twin_ids.count(id));
    CHECK(id[0] == 'H');  // only slices of healthy patients feed the Y domain
  }
  for (const auto& s : cohort.slices) {
    if (folds.assignment.at(s.patient_id) != 0) continue;
    CHECK(std::find(set.x_ids.begin(), set.x_ids.end(), s.id) == set.x_ids.end());
    CHECK(std::find(set.y_ids.begin(), set.y_ids.end(), s.id) == set.y_ids.end());
  }

  FoldPlan bad;
  bad.k = 2;
  for (const auto& p : cohort.patients)
    bad.assignment[p.id] = p.severity == Severity::HEALTHY ? 1 : 0;
  CHECK_THROWS_AS(training_domains<float>(cohort, bad, 0), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// buffer
// ---------------------------------------------------------------------------

TEST_CASE("image buffer: degenerate capacities") {
  Rng rng(1);
  ImageBuffer<float> none(0);
  const auto img = Tensor<float>::full(1, 1, 2, 2, 0.5f);
  const auto out = none.query(img, rng);
  CHECK(out[0] == 0.5f);
  CHECK(none.size() == 0);

  ImageBuffer<float> some(3);
  for (int i = 0; i < 3; ++i) {
    const auto fresh = Tensor<float>::full(1, 1, 2, 2, float(i));
    const auto ret = some.query(fresh, rng);
    CHECK(ret[0] == float(i));  // below capacity: fresh comes back
  }
  CHECK(some.size() == 3);
}

TEST_CASE("image buffer: swap frequency is one half at capacity") {
  Rng rng(42);
  ImageBuffer<float> buf(8);
  for (int i = 0; i < 8; ++i) buf.query(Tensor<float>::full(1, 1, 1, 1, -1.f), rng);

  const int queries = 10000;
  int swaps = 0;
  for (int i = 0; i < queries; ++i) {
    const auto fresh = Tensor<float>::full(1, 1, 1, 1, float(i));
    const auto ret = buf.query(fresh, rng);
    swaps += ret[0] != float(i);
  }
  const double freq = double(swaps) / queries;
  CHECK(freq > 0.48);
  CHECK(freq < 0.52);
}

// ---------------------------------------------------------------------------
// trainer
// ---------------------------------------------------------------------------

TEST_CASE("two identically seeded runs are bitwise identical") {
  namespace fs = std::filesystem;
  const auto cohort = generate_cohort(tiny_config());
  const auto folds = make_folds(cohort.patients, 2, 5);
  const auto cfg = tiny_train(CycleMode::SYMMETRIC, 0.5, /*epochs=*/3);
  const ModelSeeds seeds{11, 12, 13, 14};

  auto a = train_run<float>(cohort, folds, 0, cfg, tiny_gen(), tiny_disc(), seeds);
  auto b = train_run<float>(cohort, folds, 0, cfg, tiny_gen(), tiny_disc(), seeds);

  REQUIRE(a.trajectory.size() == b.trajectory.size());
  REQUIRE(a.trajectory.size() >= 10);
  for (std::size_t i = 0; i < a.trajectory.size(); ++i)
    CHECK(rows_equal(a.trajectory[i], b.trajectory[i]));

  const auto pa = fs::temp_directory_path() / "asymcycle_det_a.bin";
  const auto pb = fs::temp_directory_path() / "asymcycle_det_b.bin";
  save_bundle(a.bundle, pa);
  save_bundle(b.bundle, pb);
  CHECK(file_bytes(pa) == file_bytes(pb));
  fs::remove(pa);
  fs::remove(pb);
}

TEST_CASE("iteration count equals epochs times the larger training domain") {
  const auto cohort = generate_cohort(tiny_config());
  const auto folds = make_folds(cohort.patients, 2, 5);
  const auto set = training_domains<float>(cohort, folds, 1);
  const int larger = std::max(set.x_images.size(), set.y_images.size());

  const auto cfg = tiny_train(CycleMode::ASYMMETRIC, 1.0, 3);
  const auto out = train_run<float>(cohort, folds, 1, cfg, tiny_gen(), tiny_disc(), {1, 2, 3, 4});
  CHECK(static_cast<int>(out.trajectory.size()) == 3 * larger);
}

TEST_CASE("learning rate zero leaves parameters untouched but logs losses") {
  const auto cohort = generate_cohort(tiny_config());
  const auto folds = make_folds(cohort.patients, 2, 5);
  auto cfg = tiny_train(CycleMode::SYMMETRIC, 1.0, 1);
  cfg.learning_rate = 0.0;

  auto bundle = build_bundle<float>(tiny_gen(), tiny_disc(), 1, 2, 3, 4);
  const auto before = snapshot(bundle);
  auto set = training_domains<float>(cohort, folds, 0);
  UnpairedLoader<float> loader(set.x_images, set.y_images, true, 1, cfg.seed);
  CycleTrainer<float> trainer(bundle, std::move(loader), cfg);
  for (int i = 0; i < 3; ++i) trainer.step();

  CHECK(trainer.trajectory().size() == 3);
  for (const auto& row : trainer.trajectory()) CHECK(std::isfinite(row.total_generators));
  const auto after = snapshot(bundle);
  CHECK(before == after);
}

TEST_CASE("one step with a positive learning rate moves every network") {
  const auto cohort = generate_cohort(tiny_config());
  const auto folds = make_folds(cohort.patients, 2, 5);
  auto cfg = tiny_train(CycleMode::SYMMETRIC, 1.0, 1);
  cfg.learning_rate = 1e-3;

  auto bundle = build_bundle<float>(tiny_gen(), tiny_disc(), 1, 2, 3, 4);
  auto set = training_domains<float>(cohort, folds, 0);
  UnpairedLoader<float> loader(set.x_images, set.y_images, true, 1, cfg.seed);
  CycleTrainer<float> trainer(bundle, std::move(loader), cfg);

  auto changed = [&](std::vector<ParamTensor<float>*> params,
                     const std::vector<std::vector<float>>& before, std::size_t offset) {
    for (std::size_t i = 0; i < params.size(); ++i)
      for (std::size_t j = 0; j < params[i]->value.size(); ++j)
        if (params[i]->value[j] != before[offset + i][j]) return true;
    return false;
  };

  const auto before = snapshot(bundle);
  trainer.step();
  std::size_t off = 0;
  const auto fparams = bundle.to_healthy.params();
  CHECK(changed(fparams, before, off));
  off += fparams.size();
  const auto gparams = bundle.to_pathological.params();
  CHECK(changed(gparams, before, off));
  off += gparams.size();
  const auto dhparams = bundle.disc_healthy.params();
  CHECK(changed(dhparams, before, off));
  off += dhparams.size();
  const auto dpparams = bundle.disc_pathological.params();
  CHECK(changed(dpparams, before, off));
}

TEST_CASE("asymmetric cycle column ignores the pathological stream") {
  auto ys = random_images(6, 16, 100);
  auto xs_a = random_images(6, 16, 200);
  auto xs_b = random_images(6, 16, 300);  // alternate X stream, same count

  auto cfg = tiny_train(CycleMode::ASYMMETRIC, 0.5, 2);
  cfg.learning_rate = 0.0;  // parameters frozen: the whole trajectory must agree

  auto run_with = [&](const std::vector<Tensor<float>>& xs) {
    auto bundle = build_bundle<float>(tiny_gen(), tiny_disc(), 21, 22, 23, 24);
    UnpairedLoader<float> loader(xs, ys, true, 1, cfg.seed);
    CycleTrainer<float> trainer(bundle, std::move(loader), cfg);
    trainer.run();
    return trainer.trajectory();
  };
  const auto ta = run_with(xs_a);
  const auto tb = run_with(xs_b);
  REQUIRE(ta.size() == tb.size());
  bool adv_differs = false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    CHECK(ta[i].cycle == tb[i].cycle);  // bitwise
    adv_differs |= ta[i].adv_heal != tb[i].adv_heal;
  }
  CHECK(adv_differs);

  // with learning enabled the first iteration still agrees bitwise
  cfg.learning_rate = 1e-3;
  auto bundle_a = build_bundle<float>(tiny_gen(), tiny_disc(), 21, 22, 23, 24);
  auto bundle_b = build_bundle<float>(tiny_gen(), tiny_disc(), 21, 22, 23, 24);
  UnpairedLoader<float> la(xs_a, ys, true, 1, cfg.seed), lb(xs_b, ys, true, 1, cfg.seed);
  CycleTrainer<float> tra(bundle_a, std::move(la), cfg), trb(bundle_b, std::move(lb), cfg);
  const auto ra = tra.step();
  const auto rb = trb.step();
  CHECK(ra.cycle == rb.cycle);
  CHECK(ra.adv_heal != rb.adv_heal);
}

TEST_CASE("mode isolation: zero cycle weight makes both modes identical") {
  const auto cohort = generate_cohort(tiny_config());
  const auto folds = make_folds(cohort.patients, 2, 5);
  const ModelSeeds seeds{31, 32, 33, 34};

  auto sym = train_run<float>(cohort, folds, 0, tiny_train(CycleMode::SYMMETRIC, 0.0), tiny_gen(),
                              tiny_disc(), seeds);
  auto asym = train_run<float>(cohort, folds, 0, tiny_train(CycleMode::ASYMMETRIC, 0.0), tiny_gen(),
                               tiny_disc(), seeds);
  REQUIRE(sym.trajectory.size() == asym.trajectory.size());
  for (std::size_t i = 0; i < sym.trajectory.size(); ++i)
    CHECK(rows_equal(sym.trajectory[i], asym.trajectory[i]));
  CHECK(snapshot(sym.bundle) == snapshot(asym.bundle));
}

TEST_CASE("checkpoint resume reproduces the uninterrupted trajectory exactly") {
  namespace fs = std::filesystem;
  const auto cohort = generate_cohort(tiny_config());
  const auto folds = make_folds(cohort.patients, 2, 5);
  const auto cfg = tiny_train(CycleMode::SYMMETRIC, 0.5, 4);
  const ModelSeeds seeds{41, 42, 43, 44};

  const auto straight =
      train_run<float>(cohort, folds, 0, cfg, tiny_gen(), tiny_disc(), seeds);

  const auto state_path = fs::temp_directory_path() / "asymcycle_resume_state.bin";
  auto bundle1 = build_bundle<float>(tiny_gen(), tiny_disc(), seeds.to_healthy,
                                     seeds.to_pathological, seeds.disc_pathological,
                                     seeds.disc_healthy);
  {
    auto set = training_domains<float>(cohort, folds, 0);
    UnpairedLoader<float> loader(set.x_images, set.y_images, true, 1, cfg.seed);
    CycleTrainer<float> trainer(bundle1, std::move(loader), cfg);
    trainer.run([&](CycleTrainer<float>& t, int epoch) {
      if (epoch == 2) {
        t.save_state(state_path);
        return false;  // interrupt after two epochs
      }
      return true;
    });
  }

  auto bundle2 = build_bundle<float>(tiny_gen(), tiny_disc(), seeds.to_healthy,
                                     seeds.to_pathological, seeds.disc_pathological,
                                     seeds.disc_healthy);
  bundle2.fingerprint.held_out_fold = 0;  // match what train_run stamps
  bundle2.fingerprint.train_seed = cfg.seed;
  auto set = training_domains<float>(cohort, folds, 0);
  UnpairedLoader<float> loader(set.x_images, set.y_images, true, 1, cfg.seed);
  CycleTrainer<float> trainer(bundle2, std::move(loader), cfg);
  trainer.load_state(state_path);
  trainer.run();

  REQUIRE(trainer.trajectory().size() == straight.trajectory.size());
  for (std::size_t i = 0; i < straight.trajectory.size(); ++i)
    CHECK(rows_equal(trainer.trajectory()[i], straight.trajectory[i]));

  auto final_straight = straight.bundle;
  const auto pa = fs::temp_directory_path() / "asymcycle_resume_a.bin";
  const auto pb = fs::temp_directory_path() / "asymcycle_resume_b.bin";
  save_bundle(final_straight, pa);
  save_bundle(bundle2, pb);
  CHECK(file_bytes(pa) == file_bytes(pb));
  fs::remove(pa);
  fs::remove(pb);
  fs::remove(state_path);
}

TEST_CASE("non-finite losses abort the run with a diagnostic") {
  const auto cohort = generate_cohort(tiny_config());
  const auto folds = make_folds(cohort.patients, 2, 5);
  auto cfg = tiny_train(CycleMode::SYMMETRIC, 1.0, 1);

  auto bundle = build_bundle<float>(tiny_gen(), tiny_disc(), 1, 2, 3, 4);
  // poison the output head: a NaN there reaches the losses directly (earlier
  // layers would have it silenced by ReLU-after-norm)
  bundle.to_healthy.params().back()->value[0] = std::numeric_limits<float>::quiet_NaN();
  auto set = training_domains<float>(cohort, folds, 0);
  UnpairedLoader<float> loader(set.x_images, set.y_images, true, 1, cfg.seed);
  CycleTrainer<float> trainer(bundle, std::move(loader), cfg);
  CHECK_THROWS_AS(trainer.step(), TrainingDiverged);
}

TEST_CASE("loss log round-trips trajectories digit-exactly") {
  namespace fs = std::filesystem;
  const auto cohort = generate_cohort(tiny_config());
  const auto folds = make_folds(cohort.patients, 2, 5);
  const auto cfg = tiny_train(CycleMode::ASYMMETRIC, 0.25, 1);
  const auto out = train_run<float>(cohort, folds, 0, cfg, tiny_gen(), tiny_disc(), {1, 2, 3, 4});

  const auto path = fs::temp_directory_path() / "asymcycle_losslog.txt";
  write_loss_log(path, out.trajectory);
  const auto bytes1 = file_bytes(path);
  write_loss_log(path, out.trajectory);
  CHECK(bytes1 == file_bytes(path));
  CHECK(bytes1.find("# iteration") == 0);
  fs::remove(path);
}
