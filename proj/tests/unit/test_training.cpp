#include <gtest/gtest.h>

#include <atomic>
#include <sstream>

#include "mtlforge/arch/checkpoint.hpp"
#include "mtlforge/arch/train.hpp"
#include "mtlforge/data/synthetic.hpp"
#include "support/arch_checks.hpp"

using namespace mtl;

namespace {

std::vector<TaskDataset> linear_tasks(std::size_t tasks, std::size_t samples, std::uint64_t seed = 3) {
  SyntheticSpec spec;
  spec.n_tasks = tasks;
  spec.n_features = 3;
  spec.relatedness = 0.5;
  spec.noise = 0.05;
  spec.n_samples = samples;
  spec.seed = seed;
  return generate_synthetic(spec);
}

std::vector<const TaskDataset*> ptrs(const std::vector<TaskDataset>& d) {
  std::vector<const TaskDataset*> out;
  for (const auto& t : d) out.push_back(&t);
  return out;
}

ModelConfig config_for(Arch arch, std::size_t tasks, std::size_t features, std::uint64_t seed = 1) {
  ModelConfig c;
  c.arch = arch;
  c.n_tasks = arch == Arch::baseline ? 1 : tasks;
  c.n_features = features;
  c.seed = seed;
  if (arch == Arch::sn) c.hidden_widths = {30, 14, 6};
  return c;
}

TrainConfig short_schedule(std::size_t batch = 64) {
  TrainConfig t;
  t.cycle_epochs = 3;
  t.fine_tune_epochs = 2;
  t.batch_size = batch;
  t.pooled_batch_size = 2 * batch;
  return t;
}

}  // namespace

// 50% dropout on layers only five neurons wide keeps the train-mode loss of
// a small linear problem near 0.9, so the tenfold check runs without hidden
// dropout; the default recipe must still make clear progress.
TEST(Train, BaselineLearnsLinearTasksUnderFullSchedule) {
  const auto data = linear_tasks(2, 4000);
  for (std::size_t t = 0; t < 2; ++t) {
    for (double dropout : {0.0, 0.5}) {
      ModelConfig mc = config_for(Arch::baseline, 1, 3, 10 + t);
      mc.hidden_dropout = dropout;
      Model model(mc);
      TrainConfig cfg;  // 20 + 100 epochs, batch 512
      cfg.seed = 5;
      const auto r = train(model, {&data[t]}, cfg);
      EXPECT_EQ(r.epoch_loss.size(), 120u);
      EXPECT_EQ(r.steps, 600u);  // 2560 rows -> 5 batches
      const double bound = dropout == 0.0 ? 0.1 : 0.75;
      EXPECT_LT(r.final_train_mse, bound * r.initial_train_mse)
          << "dropout " << dropout << " initial " << r.initial_train_mse << " final " << r.final_train_mse;
      EXPECT_LT(r.epoch_loss.back(), 0.5 * r.epoch_loss.front());
    }
  }
}

TEST(Train, FixedSeedGivesIdenticalWeights) {
  const auto data = linear_tasks(3, 300);
  for (auto arch : {Arch::mlpwp, Arch::ern}) {
    auto run = [&](std::uint64_t seed) {
      Model model(config_for(arch, 3, 3));
      TrainConfig cfg = short_schedule();
      cfg.seed = seed;
      train(model, ptrs(data), cfg);
      std::ostringstream os;
      write_checkpoint(os, model);
      return os.str();
    };
    EXPECT_EQ(run(4), run(4)) << arch_name(arch);
    EXPECT_NE(run(4), run(5)) << arch_name(arch);
  }
}

TEST(Train, BatchLargerThanDataIsRejected) {
  const auto data = linear_tasks(1, 100);
  Model model(config_for(Arch::baseline, 1, 3));
  EXPECT_THROW(train(model, {&data[0]}, short_schedule(512)), UsageError);
  EXPECT_THROW(train(model, {}, short_schedule()), DataError);
}

TEST(Train, EveryArchitectureReducesItsTrainingError) {
  const auto data = linear_tasks(3, 600);
  for (auto arch : kAllArchs) {
    Model model(config_for(arch, 3, 3));
    const auto tasks = arch == Arch::baseline ? std::vector<const TaskDataset*>{&data[1]} : ptrs(data);
    TrainConfig cfg = short_schedule();
    cfg.cycle_epochs = 8;
    const auto r = train(model, tasks, cfg);
    EXPECT_LT(r.final_train_mse, r.initial_train_mse) << arch_name(arch);
    EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front()) << arch_name(arch);
  }
}

TEST(Train, AlignedModelsRefuseMisalignedTasks) {
  auto data = linear_tasks(2, 200);
  std::swap(data[1].split[0], data[1].split[data[1].rows() - 1]);
  Model model(config_for(Arch::csn, 2, 3));
  EXPECT_THROW(train(model, ptrs(data), short_schedule()), DataError);
}

TEST(Train, StopFlagInterrupts) {
  const auto data = linear_tasks(2, 200);
  Model model(config_for(Arch::hps, 2, 3));
  std::atomic<bool> stop{true};
  EXPECT_THROW(train(model, ptrs(data), short_schedule(), &stop), Interrupted);
}

TEST(Train, PredictionsCoverEverySplitRow) {
  const auto data = linear_tasks(2, 200);
  for (auto arch : {Arch::mlpnp, Arch::sn}) {
    Model model(config_for(arch, 2, 3));
    const auto preds = predict_split(model, ptrs(data), Split::test, 7);
    ASSERT_EQ(preds.size(), 2u);
    for (std::size_t t = 0; t < 2; ++t) EXPECT_EQ(preds[t].size(), data[t].indices(Split::test).size());
    // chunking must not change results
    EXPECT_EQ(preds, predict_split(model, ptrs(data), Split::test, 1000));
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto data = linear_tasks(2, 200);
  for (auto arch : kAllArchs) {
    Model model(config_for(arch, 2, 3, 9));
    const auto tasks = arch == Arch::baseline ? std::vector<const TaskDataset*>{&data[0]} : ptrs(data);
    train(model, tasks, short_schedule());
    std::stringstream buf;
    write_checkpoint(buf, model);
    const std::string bytes = buf.str();
    std::stringstream in(bytes);
    Model back = read_checkpoint(in);
    EXPECT_EQ(back.config(), model.config());
    ASSERT_EQ(back.parameters().size(), model.parameters().size());
    for (std::size_t i = 0; i < model.parameters().size(); ++i)
      EXPECT_EQ(back.parameters()[i].value, model.parameters()[i].value) << model.parameters()[i].name;
    for (std::size_t i = 0; i < model.buffers().size(); ++i)
      EXPECT_EQ(back.buffers()[i].value, model.buffers()[i].value) << model.buffers()[i].name;
    EXPECT_EQ(predict_split(back, tasks, Split::test), predict_split(model, tasks, Split::test));
    std::ostringstream again;
    write_checkpoint(again, back);
    EXPECT_EQ(again.str(), bytes) << arch_name(arch);
  }
}

TEST(Checkpoint, CorruptOrMissingFilesAreDataErrors) {
  Model model(config_for(Arch::ern, 2, 3));
  std::ostringstream os;
  write_checkpoint(os, model);
  const std::string bytes = os.str();
  std::istringstream truncated(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_checkpoint(truncated), DataError);
  std::string wrong = bytes;
  wrong[8] = 9;  // version
  std::istringstream bad(wrong);
  EXPECT_THROW(read_checkpoint(bad), DataError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ern.ckpt"), DataError);
}
