#include <numeric>

#include "doctest.h"
#include "simba/data.hpp"
#include "simba/model.hpp"
#include "simba/train.hpp"

using namespace simba;

// Capacity sanity: SiMBA-micro memorizes 64 images within 1000 steps.
// Smoothing and dropout are off; smoothed targets alone keep the loss near 0.5.
TEST_CASE("64-sample overfit probe") {
  SyntheticImageSpec spec;
  spec.per_class = 7;
  const ImageDataset data = gen_synthetic_images(11, spec);
  std::vector<std::size_t> idx(64);
  std::iota(idx.begin(), idx.end(), 0);

  VisionConfig vc = VisionConfig::micro();
  vc.block.dropout = 0.0;
  Rng init = Rng(0).fork("init");
  auto model = VisionModel<float>::init(vc, init);
  OptimConfig o;
  o.max_steps = 1000;
  o.epochs = 1000;
  o.label_smoothing = 0.0;
  o.eval_every = 50;
  const TrainReport r = train_vision(model, data, idx, idx, o);

  double best = INFINITY;
  std::size_t first_step = 0;
  for (const auto& row : r.metrics.rows())
    if (row.split == "val" && row.metric == "loss") {
      if (row.value < 0.05 && first_step == 0) first_step = row.step;
      best = std::min(best, row.value);
    }
  MESSAGE("best full-probe loss " << best << ", first below 0.05 at step " << first_step);
  CHECK(r.nonfinite_steps == 0);
  CHECK(best < 0.05);
  CHECK(first_step > 0);
  CHECK(first_step <= 1000);
}
