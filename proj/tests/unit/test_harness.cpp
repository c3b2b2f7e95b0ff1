#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <set>
#include <sstream>

#include "lego/checkpoint.hpp"
#include "lego/dataset.hpp"
#include "lego/errors.hpp"
#include "lego/harness.hpp"
#include "lego/metrics.hpp"

using namespace lego;
namespace fs = std::filesystem;

namespace {

GroupPtr d3() {
  static const GroupPtr g = std::make_shared<const GroupSpec>(build_dihedral(3));
  return g;
}

struct Tiny {
  std::vector<Dataset> train, test;
  ModelConfig model;
  TrainConfig cfg;
};

Tiny tiny(int experiences = 3, int epochs = 3) {
  Tiny t;
  const auto exps = make_flipflop_experiences(d3());
  for (int i = 0; i < experiences; ++i) {
    t.train.push_back(generate_dataset(exps[static_cast<std::size_t>(i)], 200, 4, 100 + static_cast<std::uint64_t>(i)));
    t.test.push_back(generate_dataset(exps[static_cast<std::size_t>(i)], 40, 6, 200 + static_cast<std::uint64_t>(i)));
  }
  auto [bert, albert] = minimal_configs(t.train[0].vocab.size(), d3()->order());
  t.model = albert;
  t.model.layers = 2;
  t.model.heads = 2;
  t.model.hidden = 16;
  t.model.ffn = 32;
  t.cfg.epochs_per_experience = epochs;
  t.cfg.batch_size = 50;
  t.cfg.lr = LrSchedule{1e-3, 0.0, 10};
  return t;
}

std::vector<DatasetPtr> ptrs(const std::vector<Dataset>& v) {
  std::vector<DatasetPtr> out;
  for (const auto& d : v) out.push_back(borrow(d));
  return out;
}

const Dataset& big(int i) {
  static const auto exps = make_flipflop_experiences(d3());
  static const std::vector<Dataset> sets = {generate_dataset(exps[0], 60000, 4, 1), generate_dataset(exps[1], 60000, 4, 2)};
  return sets[static_cast<std::size_t>(i)];
}

fs::path temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("lego_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_SUITE("cl-harness") {
  TEST_CASE("replay buffer sizes") {
    CHECK(ReplayBuffer::capacity(0.01, 60000) == 600);
    CHECK(ReplayBuffer::capacity(0.1, 5000) == 500);
    CHECK(ReplayBuffer::capacity(0.0, 5000) == 0);
    Rng rng(1);
    ReplayBuffer none;
    update_buffer(none, 1, big(0), 0.0, rng);
    CHECK(none.empty());
    ReplayBuffer b;
    update_buffer(b, 1, big(0), 0.01, rng);
    update_buffer(b, 2, big(1), 0.01, rng);
    CHECK(b.size() == 1200);
    CHECK(b.counts() == std::map<int, std::size_t>{{1, 600}, {2, 600}});
    std::set<std::pair<int, std::int64_t>> unique;
    for (const auto& it : b.items()) unique.insert({it.experience, it.example_id});
    CHECK(unique.size() == 1200);
    CHECK_THROWS(update_buffer(b, 2, big(1), 0.01, rng));
    const auto t = tiny(1);
    ReplayBuffer all;
    update_buffer(all, 1, t.train[0], 1.0, rng);
    CHECK(all.size() == t.train[0].size());
  }

  TEST_CASE("batch composition") {
    Rng rng(2);
    ReplayBuffer empty;
    for (const auto& it : build_batch(2, big(1), empty, 500, rng)) CHECK(it.experience == 2);
    ReplayBuffer b;
    update_buffer(b, 1, big(0), 0.1, rng);
    REQUIRE(b.size() == 6000);
    const int batches = 1000, size = 500;
    long replayed = 0;
    for (int n = 0; n < batches; ++n) {
      const auto batch = build_batch(2, big(1), b, size, rng);
      CHECK(batch.size() == static_cast<std::size_t>(size));
      for (const auto& it : batch) replayed += it.experience == 1;
    }
    const double N = static_cast<double>(batches) * size, p = 6000.0 / 66000.0;
    INFO("replayed " << replayed);
    CHECK(std::abs(replayed - N * p) <= 3 * std::sqrt(N * p * (1 - p)));
    CHECK_THROWS(build_batch(1, big(0), b, 500, rng));

    const auto epoch = epoch_batches(2, big(1), b, 500, rng);
    CHECK(epoch.size() == 66000 / 500);
    std::set<std::pair<int, std::int64_t>> seen;
    for (const auto& batch : epoch) {
      for (const auto& it : batch) CHECK(seen.insert({it.experience, it.example_id}).second);
    }
  }

  TEST_CASE("training bookkeeping and strict continual learning") {
    auto t = tiny();
    SequentialTrainer tr(Model(t.model, 1), ptrs(t.train), ptrs(t.test), t.cfg, 1);
    tr.enable_batch_trace(true);
    std::vector<int> epochs;
    tr.on_epoch = [&](const EpochReport& r) { epochs.push_back(r.global_epoch); };
    const auto& rec = tr.run();
    CHECK(rec.total_epochs() == 9);
    CHECK(rec.completed_epochs() == 9);
    CHECK(epochs == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9});
    REQUIRE(tr.batch_trace().size() == 9);
    for (int k = 1; k <= 9; ++k) {
      const int phase = rec.phase_of(k);
      CHECK(tr.batch_trace()[static_cast<std::size_t>(k - 1)].size() == 200);
      for (const auto& [exp, id] : tr.batch_trace()[static_cast<std::size_t>(k - 1)]) CHECK(exp == phase);
    }
    CHECK(rec.manifest.size() >= 3);
    for (int k = 1; k <= 9; ++k) {
      CHECK(rec.lr(k) == doctest::Approx(t.cfg.lr.at(k - 1)));
      CHECK(std::isfinite(rec.train_loss(k)));
    }
  }

  TEST_CASE("replay keeps current experience out of the buffer") {
    auto t = tiny();
    t.cfg.replay_fraction = 0.1;
    SequentialTrainer tr(Model(t.model, 2), ptrs(t.train), ptrs(t.test), t.cfg, 2);
    tr.enable_batch_trace(true);
    // The buffer is filled at each boundary, when the next phase starts.
    tr.run_phase();
    CHECK(tr.buffer().empty());
    tr.run_phase();
    CHECK(tr.buffer().counts() == std::map<int, std::size_t>{{1, 20}});
    tr.run_phase();
    CHECK(tr.buffer().counts() == std::map<int, std::size_t>{{1, 20}, {2, 20}});
    // Phase 2 epochs draw from 200 current + 20 replayed examples.
    for (int k = 4; k <= 6; ++k) {
      const auto& items = tr.batch_trace()[static_cast<std::size_t>(k - 1)];
      CHECK(items.size() == 200);
      for (const auto& [exp, id] : items) CHECK((exp == 1 || exp == 2));
    }
  }

  TEST_CASE("determinism and branching") {
    auto t = tiny();
    auto run = [&](double replay) {
      auto cfg = t.cfg;
      cfg.replay_fraction = replay;
      SequentialTrainer tr(Model(t.model, 7), ptrs(t.train), ptrs(t.test), cfg, 7);
      tr.run();
      return tr;
    };
    const auto a = run(0.0);
    const auto b = run(0.0);
    CHECK(a.record().same_curves(b.record()));
    REQUIRE(a.record().manifest.size() == b.record().manifest.size());
    for (std::size_t n = 0; n < a.record().manifest.size(); ++n) {
      CHECK(a.record().manifest[n].digest == b.record().manifest[n].digest);
    }
    // Branch after phase 1 with a different replay fraction == fresh run.
    auto cfg = t.cfg;
    SequentialTrainer base(Model(t.model, 7), ptrs(t.train), ptrs(t.test), cfg, 7);
    base.run_phase();
    auto branched = base.branch();
    branched.set_replay_fraction(0.1);
    branched.run();
    const auto fresh = run(0.1);
    CHECK(branched.record().same_curves(fresh.record()));
    for (std::size_t n = 0; n < fresh.record().manifest.size(); ++n) {
      CHECK(branched.record().manifest[n].digest == fresh.record().manifest[n].digest);
    }
    // The base trainer was not disturbed by the branch.
    base.run();
    CHECK(base.record().same_curves(a.record()));
  }

  TEST_CASE("single experience and train_sequential") {
    auto t = tiny(1, 2);
    Model model(t.model, 3);
    const auto rec = train_sequential(model, t.train, t.test, t.cfg, 3);
    CHECK(rec.experiences() == 1);
    CHECK(rec.total_epochs() == 2);
    CHECK_NOTHROW(rec.C(4, 1, 2));
    CHECK_THROWS(rec.C(4, 2, 2));
  }

  TEST_CASE("evaluation is pure and repeatable") {
    auto t = tiny(1);
    const Model model(t.model, 4);
    const auto before = sha256_hex(serialize_checkpoint(model, {}));
    const auto a = evaluate(model, t.test[0]);
    const auto b = evaluate(model, t.test[0]);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.loss == b.loss);
    CHECK(a.accuracy.size() == 6);
    CHECK(sha256_hex(serialize_checkpoint(model, {})) == before);
    CHECK(evaluate(model, t.test[0], 10).accuracy.size() == 6);
  }

  TEST_CASE("non-finite loss stops training") {
    auto t = tiny(1);
    Model model(t.model, 5);
    model.parameters()[0].tensor.mutable_values()[0] = std::numeric_limits<float>::quiet_NaN();
    auto& table = model.parameters()[0].tensor;
    std::fill(table.mutable_values().begin(), table.mutable_values().end(), std::numeric_limits<float>::quiet_NaN());
    CHECK_THROWS_AS(train_sequential(model, t.train, t.test, t.cfg, 5), TrainingError);
  }

  TEST_CASE("config validation and json") {
    TrainConfig c;
    CHECK(c.epochs_per_experience == 100);
    CHECK(c.batch_size == 500);
    CHECK(c.seeds.size() == 4);
    CHECK_NOTHROW(c.validate());
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.batch_size = 500;
    CHECK_THROWS_AS(c.validate(100), ConfigError);
    c.replay_fraction = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    TrainConfig d;
    d.reset_optimizer = true;
    d.lr.mode = LrMode::restart;
    d.schedule = ScheduleKind::incremental;
    d.lr.warmup_steps = 4;
    const nlohmann::json j = d;
    const auto back = j.get<TrainConfig>();
    CHECK(back.reset_optimizer);
    CHECK(back.lr.mode == LrMode::restart);
    CHECK(back.schedule == ScheduleKind::incremental);
    CHECK(back.lr.warmup_steps == 4);
    CHECK(back.lr.warmup_factor(1) == 0.25);
    CHECK(back.lr.warmup_factor(4) == 1.0);
    CHECK(TrainConfig{}.lr.warmup_factor(1) == 1.0);
    d.lr.warmup_steps = -1;
    CHECK_THROWS_AS(d.validate(), ConfigError);
    CHECK(schedule_from_string("full") == ScheduleKind::full);
    CHECK_THROWS_AS(schedule_from_string("zigzag"), ConfigError);
  }

  TEST_CASE("metrics table round trip") {
    auto t = tiny();
    Model model(t.model, 6);
    const auto rec = train_sequential(model, t.train, t.test, t.cfg, 6);
    std::ostringstream out;
    write_metrics_csv(rec, out);
    std::istringstream in(out.str());
    const auto back = read_metrics_csv(in, rec.experience_names(), rec.epochs_per_experience());
    for (int k = 1; k <= rec.total_epochs(); ++k) {
      CHECK(back.lr(k) == rec.lr(k));
      for (int x = 1; x <= rec.experiences(); ++x) {
        CHECK(back.eval_loss(x, k) == rec.eval_loss(x, k));
        for (int j = 1; j <= rec.positions(); ++j) CHECK(back.C(j, x, k) == rec.C(j, x, k));
      }
    }
    std::ostringstream again;
    write_metrics_csv(back, again);
    CHECK(again.str() == out.str());
    CHECK(out.str().rfind("global_epoch,experience_trained,eval_experience,position,accuracy,loss,lr\n", 0) == 0);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("save, load and evaluate") {
    auto t = tiny(1);
    const Model model(t.model, 8);
    const auto dir = temp_dir("ckpt");
    const auto entry = save_checkpoint(model, {3, 1}, dir / "m.ckpt");
    CHECK(entry.digest == sha256_hex(read_file_bytes(dir / "m.ckpt")));
    const auto loaded = load_checkpoint(dir / "m.ckpt", entry.digest);
    CHECK(loaded.info.global_epoch == 3);
    CHECK(loaded.config == model.config());
    const auto a = evaluate(model, t.test[0]);
    const auto b = evaluate(loaded.model, t.test[0]);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.loss == b.loss);
    CHECK(serialize_checkpoint(loaded.model, {3, 1}) == read_file_bytes(dir / "m.ckpt"));

    Model target(t.model, 99);
    load_checkpoint_into(target, dir / "m.ckpt", entry.digest);
    CHECK(evaluate(target, t.test[0]).loss == a.loss);

    auto shared_cfg = t.model;
    shared_cfg.weight_sharing = !shared_cfg.weight_sharing;
    Model other(shared_cfg, 1);
    CHECK_THROWS_AS(load_checkpoint_into(other, dir / "m.ckpt"), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(dir / "m.ckpt", std::string(64, '0')), CheckpointError);
    auto bytes = read_file_bytes(dir / "m.ckpt");
    bytes[bytes.size() / 2] ^= 0x5a;
    CHECK_THROWS_AS(deserialize_checkpoint(bytes, entry.digest), CheckpointError);
    CHECK_THROWS_AS(deserialize_checkpoint("garbage"), CheckpointError);
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  }

  TEST_CASE("run directory manifest") {
    auto t = tiny();
    const auto dir = temp_dir("run");
    SequentialTrainer tr(Model(t.model, 9), ptrs(t.train), ptrs(t.test), t.cfg, 9);
    tr.set_run_directory(dir);
    tr.run();
    const auto manifest = read_manifest(dir / "checkpoints" / "manifest.csv");
    CHECK(manifest.size() >= 3);
    for (const auto& e : manifest) {
      CHECK(fs::exists(dir / e.path));
      CHECK(sha256_hex(read_file_bytes(dir / e.path)) == e.digest);
    }
    CHECK(manifest.back().global_epoch == 9);
    CHECK(manifest.back().experience == 3);
  }
}
