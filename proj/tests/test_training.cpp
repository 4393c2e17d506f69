#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

using namespace vfevent;
using namespace vfevent::testing;

namespace {

const Dataset& pair_dataset() {
  static const Dataset ds = [] {
    const auto dir = scratch_dir("training_pair");
    return load_dataset(write_toy_dataset(colour_pair_spec(), dir, 7));
  }();
  return ds;
}

Episode pair_episode(std::uint64_t seed = 1) { return sample_episode(pair_dataset(), 2, 10, seed); }

// Toy calibration with the imaginator stages shortened so unit tests stay fast.
ModelConfig quick_config() {
  ModelConfig mc = toy_model_config();
  mc.imaginator.pretrain_steps = 40;
  mc.imaginator.customize_steps = 30;
  mc.imaginator.sample_steps = 5;
  return mc;
}

TrainConfig quick_train(int epochs = 4) {
  TrainConfig tc = toy_train_config(2);
  tc.k_shots = 10;
  tc.epochs = epochs;
  tc.seed = 3;
  return tc;
}

std::vector<std::string> support_texts(const Episode& ep) {
  std::vector<std::string> texts;
  for (const auto& inst : ep.support) texts.push_back(inst.text);
  return texts;
}

bool same_values(ModelState& a, ModelState& b) {
  const auto pa = a.params();
  const auto pb = b.params();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->name != pb[i]->name || pa[i]->value.size() != pb[i]->value.size()) return false;
    if (std::memcmp(pa[i]->value.data(), pb[i]->value.data(), sizeof(double) * std::size_t(pa[i]->size())) != 0) {
      return false;
    }
  }
  return true;
}

bool same_classifier(ModelState& a, ModelState& b) {
  const auto pa = a.classifier_params();
  const auto pb = b.classifier_params();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->value != pb[i]->value) return false;
  }
  return pa.size() == pb.size();
}

// Mean eval-mode class loss over the support set.
double support_loss(ModelState& model, const Episode& ep) {
  const auto support = load_support(ep, model.config.resolution);
  std::vector<ClassExample> batch;
  for (const auto& item : support) {
    batch.push_back({item.instance.text, item.image ? &*item.image : nullptr, model.label_of(item.instance.label), {}});
  }
  return class_loss(model, batch);
}

}  // namespace

TEST(TrainConfig, ValidationRejectsBadValues) {
  TrainConfig tc;
  EXPECT_NO_THROW(tc.validate());
  tc.learning_rate = 0.0;
  EXPECT_THROW(tc.validate(), Error);
  tc = {};
  tc.batch_size = 0;
  EXPECT_THROW(tc.validate(), Error);
  tc = {};
  tc.beta = -0.1;
  EXPECT_THROW(tc.validate(), Error);
  tc = {};
  tc.beta = 0.0;
  EXPECT_NO_THROW(tc.validate());
}

TEST(TrainConfig, DefaultsAndJsonRoundTrip) {
  const TrainConfig d;
  EXPECT_EQ(d.learning_rate, 2e-5);
  EXPECT_EQ(d.batch_size, 4);
  EXPECT_EQ(d.epochs, 50);
  EXPECT_EQ(d.beta, 0.01);
  EXPECT_EQ(d.mode, TrainMode::kStaged);

  TrainConfig c;
  c.mode = TrainMode::kJoint;
  c.freeze_policy = FreezePolicy::kAllTrainable;
  c.modality = Modality::kVisualOnly;
  c.beta = 0.5;
  const TrainConfig back = train_config_from_json(to_json(c));
  EXPECT_EQ(back.mode, TrainMode::kJoint);
  EXPECT_EQ(back.freeze_policy, FreezePolicy::kAllTrainable);
  EXPECT_EQ(back.modality, Modality::kVisualOnly);
  EXPECT_EQ(back.beta, 0.5);
  EXPECT_THROW(parse_train_mode("both"), Error);
}

TEST(Train, ZeroEpochsReturnsInitialization) {
  const Episode ep = pair_episode();
  const ModelConfig mc = quick_config();
  TrainConfig tc = quick_train(0);
  TrainResult result = train(ep, mc, tc);
  EXPECT_TRUE(result.log.records.empty());
  const auto texts = support_texts(ep);
  ModelState fresh = init_model(mc, ep.event_types, texts, derive_seed(tc.seed, "init"));
  EXPECT_TRUE(same_values(result.model, fresh));
  EXPECT_EQ(result.model.pool.size(), ep.support.size());
}

TEST(Train, StagedReducesSupportLoss) {
  const Episode ep = pair_episode();
  const ModelConfig mc = quick_config();
  TrainConfig tc = quick_train(50);
  ModelState fresh = init_model(mc, ep.event_types, support_texts(ep), derive_seed(tc.seed, "init"));
  const double before = support_loss(fresh, ep);
  TrainResult result = train(ep, mc, tc);
  const double after = support_loss(result.model, ep);
  EXPECT_LE(after, 0.25 * before) << "before " << before << " after " << after;

  const auto curve = result.log.class_losses("finetune");
  ASSERT_FALSE(curve.empty());
  EXPECT_LT(curve.back(), curve.front());
}

TEST(Train, StagesAppearInOrderWithMonotoneSteps) {
  const Episode ep = pair_episode();
  TrainResult result = train(ep, quick_config(), quick_train(2));
  const auto& recs = result.log.records;
  ASSERT_FALSE(recs.empty());
  const std::vector<std::string> order{"warmup", "customize", "finetune"};
  std::size_t stage = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(recs[i].step, i);
    EXPECT_TRUE(std::isfinite(recs[i].class_loss));
    EXPECT_TRUE(std::isfinite(recs[i].visual_loss));
    while (stage < order.size() && recs[i].stage != order[stage]) ++stage;
    ASSERT_LT(stage, order.size()) << "unexpected stage order at step " << i;
  }
  EXPECT_EQ(result.log.visual_losses("warmup").size(), 40u);
  EXPECT_EQ(result.log.visual_losses("customize").size(), 30u);
  // 30 support items (two types plus none), batch 4 with the partial batch kept, 2 epochs
  EXPECT_EQ(result.log.class_losses("finetune").size(), 16u);
}

TEST(Train, TextOnlyModelSkipsImaginator) {
  const Episode ep = pair_episode();
  TrainConfig tc = quick_train(1);
  tc.modality = Modality::kTextOnly;
  TrainResult result = train(ep, quick_config(), tc);
  for (const auto& r : result.log.records) EXPECT_EQ(r.stage, "finetune");
}

TEST(Train, DeterministicGivenEpisodeAndConfig) {
  const Episode ep = pair_episode();
  const ModelConfig mc = quick_config();
  TrainResult a = train(ep, mc, quick_train(3));
  TrainResult b = train(ep, mc, quick_train(3));
  ASSERT_EQ(a.log.records.size(), b.log.records.size());
  for (std::size_t i = 0; i < a.log.records.size(); ++i) {
    EXPECT_EQ(a.log.records[i].class_loss, b.log.records[i].class_loss);
    EXPECT_EQ(a.log.records[i].visual_loss, b.log.records[i].visual_loss);
  }
  EXPECT_TRUE(same_values(a.model, b.model));

  TrainConfig other = quick_train(3);
  other.seed = 4;
  TrainResult c = train(ep, mc, other);
  EXPECT_FALSE(same_values(a.model, c.model));
}

TEST(Train, StagedCustomizationOnlyMovesConditioningEncoder) {
  const Episode ep = pair_episode();
  ModelConfig mc = quick_config();
  mc.imaginator.pretrain_steps = 0;
  TrainConfig tc = quick_train(1);
  ModelState fresh = init_model(mc, ep.event_types, support_texts(ep), derive_seed(tc.seed, "init"));
  TrainResult result = train(ep, mc, tc);

  const auto before = fresh.imaginator.params();
  const auto after = result.model.imaginator.params();
  ASSERT_EQ(before.size(), after.size());
  bool cond_changed = false;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const bool same = std::memcmp(before[i]->value.data(), after[i]->value.data(),
                                  sizeof(double) * std::size_t(before[i]->size())) == 0;
    if (!after[i]->trainable) {
      EXPECT_TRUE(same) << before[i]->name << " is frozen but changed";
    } else if (!same) {
      cond_changed = true;
    }
  }
  EXPECT_TRUE(cond_changed);
}

TEST(Train, JointWithZeroBetaMatchesStagedClassifierTrajectory) {
  const Episode ep = pair_episode();
  const ModelConfig mc = quick_config();
  TrainConfig staged = quick_train(3);
  TrainConfig joint = staged;
  joint.mode = TrainMode::kJoint;
  joint.beta = 0.0;
  TrainResult a = train(ep, mc, staged);
  TrainResult b = train(ep, mc, joint);
  EXPECT_TRUE(same_classifier(a.model, b.model));
  const auto ca = a.log.class_losses("finetune");
  const auto cb = b.log.class_losses("joint");
  ASSERT_EQ(ca.size(), cb.size());
  for (std::size_t i = 0; i < ca.size(); ++i) EXPECT_EQ(ca[i], cb[i]);
}

TEST(Train, JointVisualTermNeverReachesClassifier) {
  const Episode ep = pair_episode();
  const ModelConfig mc = quick_config();
  TrainConfig zero = quick_train(2);
  zero.mode = TrainMode::kJoint;
  zero.beta = 0.0;
  TrainConfig heavy = zero;
  heavy.beta = 1.0;
  TrainResult a = train(ep, mc, zero);
  TrainResult b = train(ep, mc, heavy);
  EXPECT_TRUE(same_classifier(a.model, b.model));
  bool imaginator_differs = false;
  const auto ia = a.model.imaginator.params();
  const auto ib = b.model.imaginator.params();
  for (std::size_t i = 0; i < ia.size(); ++i) imaginator_differs = imaginator_differs || ia[i]->value != ib[i]->value;
  EXPECT_TRUE(imaginator_differs);
}

TEST(Train, JointCombinedLossIsClassPlusBetaVisual) {
  const Episode ep = pair_episode();
  TrainConfig tc = quick_train(2);
  tc.mode = TrainMode::kJoint;
  tc.beta = 0.37;
  TrainResult result = train(ep, quick_config(), tc);
  std::size_t joint_steps = 0;
  for (const auto& r : result.log.records) {
    if (r.stage != "joint") continue;
    ++joint_steps;
    EXPECT_GT(r.visual_loss, 0.0);
    EXPECT_NEAR(r.combined_loss, r.class_loss + tc.beta * r.visual_loss, 1e-9);
  }
  EXPECT_EQ(joint_steps, 16u);
  EXPECT_TRUE(result.log.visual_losses("customize").empty());
}

TEST(Train, DivergenceNamesTheStep) {
  const Episode ep = pair_episode();
  ModelConfig mc = quick_config();
  mc.imaginator.pretrain_steps = 0;
  mc.imaginator.customize_steps = 0;
  TrainConfig tc = quick_train(3);
  tc.learning_rate = 1e300;
  std::vector<TrainRecord> seen;
  try {
    train(ep, mc, tc, nullptr, {}, [&](const TrainRecord& r) { seen.push_back(r); });
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kTraining);
    ASSERT_FALSE(seen.empty());
    const std::string msg = e.what();
    const auto& last = seen.back();
    const std::size_t failing = std::isfinite(last.combined_loss) ? last.step + 1 : last.step;
    const std::string step = "step " + std::to_string(failing);
    EXPECT_NE(msg.find(step), std::string::npos) << msg;
  }
}

TEST(Train, MissingSupportImageIsRejected) {
  const auto dir = scratch_dir("training_missing");
  const Dataset& full = pair_dataset();
  Dataset ds = full;
  for (auto& inst : ds.instances) {
    if (inst.id == "attack-000") inst.image_ref.reset();
  }
  Episode ep = sample_episode(ds, 2, 60, 0);
  try {
    train(ep, quick_config(), quick_train(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
    EXPECT_NE(std::string(e.what()).find("attack-000"), std::string::npos) << e.what();
  }
  TrainConfig text_only = quick_train(1);
  text_only.modality = Modality::kTextOnly;
  EXPECT_NO_THROW(train(ep, quick_config(), text_only));
}

TEST(Train, CheckpointHookFiresAtInterval) {
  const Episode ep = pair_episode();
  TrainConfig tc = quick_train(5);
  tc.checkpoint_every = 2;
  std::vector<int> epochs;
  train(ep, quick_config(), tc, nullptr, [&](ModelState&, int epoch) { epochs.push_back(epoch); });
  EXPECT_EQ(epochs, (std::vector<int>{2, 4}));
}

TEST(Train, InitialModelMustShareLabels) {
  const Episode ep = pair_episode();
  ModelState other = init_model(quick_config(), {"x", "y"}, support_texts(ep), 0);
  EXPECT_THROW(train(ep, quick_config(), quick_train(1), &other), Error);
}

TEST(TrainLog, CsvHasHeaderAndOneRowPerRecord) {
  TrainLog log;
  log.records = {{0, "customize", 0.0, 1.5, 0.015}, {1, "finetune", 0.25, 0.0, 0.25}};
  const auto dir = scratch_dir("trainlog");
  log.write_csv(dir / "log.csv");
  std::ifstream in(dir / "log.csv");
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(), "step,stage,class_loss,visual_loss,combined_loss\n"
                      "0,customize,0,1.5,0.014999999999999999\n"
                      "1,finetune,0.25,0,0.25\n");
}

TEST(GradientCheckFull, EpsilonOutOfRange) {
  ModelState model = init_model(tiny_model_config(), {"attack", "meet"}, tiny_texts(), 0);
  CheckBatch batch;
  batch.class_items.push_back({tiny_texts()[0], nullptr, 0, {}});
  EXPECT_THROW(gradient_check(model, batch, 0.0, LossKind::kClass), Error);
  EXPECT_THROW(gradient_check(model, batch, 1e-3, LossKind::kClass), Error);
  EXPECT_THROW(gradient_check(model, batch, 1e-5, LossKind::kVisual), Error);
}

TEST(Train, ImaginedColourFollowsPrompt) {
  const Episode ep = pair_episode();
  TrainConfig tc = quick_train(1);
  TrainResult result = train(ep, toy_model_config(), tc);
  const ModelState& m = result.model;
  auto distance = [](const ImageArray& img, const std::array<double, 3>& colour) {
    double d = 0.0;
    for (int c = 0; c < 3; ++c) d += std::pow(img.channel_mean(c) - colour[c], 2);
    return d;
  };
  for (const auto& [text, own, other] : {std::tuple{"troops attack the town", kRed, kBlue},
                                         std::tuple{"trucks transport the goods", kBlue, kRed}}) {
    const ImageArray img = synthesize(m.imaginator, m.tokenizer.encode(text), m.config.imaginator.sample_steps, 4);
    EXPECT_LT(distance(img, own), distance(img, other)) << text;
    EXPECT_LT(distance(img, own), distance(img, kGreen)) << text;
  }
}
