#include "marsrec/metric_losses.hpp"

#include "marsrec/rng.hpp"

namespace marsrec {

PairBatch build_pair_batch(const PatchDataset& ds, const std::vector<int>& instance_pool, int B,
                           uint64_t seed, const TransformRanges& ranges) {
  if (B < 2 || B % 2 != 0) throw InputError("build_pair_batch: batch size must be even and >= 2");
  const int half = B / 2;
  if (static_cast<int>(instance_pool.size()) < half)
    throw InputError("build_pair_batch: need at least B/2 instances");
  ranges.validate();

  Rng rng(seed);
  std::vector<int> pool = instance_pool;
  rng.shuffle(pool);
  pool.resize(half);

  const int H = ds.patch_res, W = ds.patch_res;
  PairBatch batch;
  batch.images = Tensor<float>({B, 1, H, W});
  batch.labels.resize(B);
  batch.transforms.resize(B);
  batch.twin_index.resize(B);

  for (int k = 0; k < half; ++k) {
    const Image base = ds.load_instance(pool[k]);
    if (base.dim(0) != H || base.dim(1) != W)
      throw InputError("build_pair_batch: image resolution mismatch");
    for (int v = 0; v < 2; ++v) {
      const int row = 2 * k + v;
      const TransformSpec t = sample_transform(rng, ranges, H, W);
      const Image view = apply_transform(base, t);
      std::copy(view.vec().begin(), view.vec().end(),
                batch.images.data() + static_cast<int64_t>(row) * H * W);
      batch.labels[row] = pool[k];
      batch.transforms[row] = t;
      batch.twin_index[row] = 2 * k + (1 - v);
    }
  }
  return batch;
}

}  // namespace marsrec
