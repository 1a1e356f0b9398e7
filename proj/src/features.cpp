#include "voxmim/features.hpp"

#include <numeric>
#include <thread>

namespace voxmim {

std::vector<DMatrix> extract_layer_features(Encoder<float>& enc,
                                            const std::vector<std::vector<float>>& patch_rows,
                                            int threads) {
  const int n = static_cast<int>(patch_rows.size());
  const int layers = enc.cfg.blocks;
  const int d = enc.cfg.dim;
  std::vector<DMatrix> out(static_cast<size_t>(layers));
  for (auto& m : out) m = DMatrix(n, d);

  auto worker = [&](int s) {
    Tape<float> t;
    t.set_grad_enabled(false);
    const int n_tokens = enc.cfg.max_tokens;
    Tensor<float> rows = t.constant({n_tokens, enc.cfg.patch_len},
                                    patch_rows[static_cast<size_t>(s)]);
    std::vector<int> positions(static_cast<size_t>(n_tokens));
    std::iota(positions.begin(), positions.end(), 0);
    auto res = enc.encode(t, enc.embed_patches(t, rows, positions), false);
    for (int l = 0; l < layers; ++l) {
      Tensor<float> pooled = t.mean0(res.layers[static_cast<size_t>(l)]);
      const auto& pd = pooled.data();
      for (int c = 0; c < d; ++c)
        out[static_cast<size_t>(l)].at(s, c) = static_cast<double>(pd[static_cast<size_t>(c)]);
    }
  };
  const int tcount = std::max(1, std::min(threads, n));
  if (tcount <= 1) {
    for (int s = 0; s < n; ++s) worker(s);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < tcount; ++w)
      pool.emplace_back([&, w] {
        for (int s = w; s < n; s += tcount) worker(s);
      });
    for (auto& th : pool) th.join();
  }
  return out;
}

}  // namespace voxmim
