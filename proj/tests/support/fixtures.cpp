#include "fixtures.hpp"

namespace onevl::support {

const SmallWorld& small_world() {
  static const SmallWorld w = [] {
    SmallWorld s;
    s.ds = generate_dataset(120, 11);
    std::vector<Raster> rasters;
    for (const auto& x : s.ds.train) {
      rasters.push_back(x.frame_now);
      rasters.push_back(x.frame_future[0]);
      rasters.push_back(x.frame_future[1]);
    }
    s.cb = train_codebook(rasters, 32, 5, 1);
    for (const auto& x : s.ds.train) s.train.push_back(tokenize_sample(x, s.vocab, s.cb));
    for (const auto& x : s.ds.val) s.val.push_back(tokenize_sample(x, s.vocab, s.cb));
    for (const auto& x : s.ds.test) s.test.push_back(tokenize_sample(x, s.vocab, s.cb));
    s.model.d = 16;
    s.model.n_layers = 2;
    s.model.n_heads = 2;
    s.model.dec_layers = 1;
    s.model.dec_heads = 2;
    s.model.codebook_size = 32;
    return s;
  }();
  return w;
}

ModelBundle small_bundle(std::uint64_t seed) {
  const auto& w = small_world();
  ModelBundle b = init_bundle(w.model, w.vocab, seed);
  for (auto& p : b.params.all()) {
    for (auto& v : p.value.mutable_data()) v *= 10.0;
  }
  return b;
}

}  // namespace onevl::support
