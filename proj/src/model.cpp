#include "onevl/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "onevl/rng.hpp"

namespace onevl {

namespace {

using ojson = nlohmann::ordered_json;

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

Tensor randn(Rng& rng, Shape shape, double stddev) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor::from(std::move(shape), std::move(v));
}

struct Builder {
  ParamStore& ps;
  Rng& rng;
  void weight(const std::string& name, std::size_t r, std::size_t c) { ps.add(name, randn(rng, {r, c}, 0.02), true); }
  void embedding(const std::string& name, std::size_t r, std::size_t c) {
    ps.add(name, randn(rng, {r, c}, 0.02), false);
  }
  void bias(const std::string& name, std::size_t n) { ps.add(name, Tensor::zeros({n}), false); }
  void gain(const std::string& name, std::size_t n) { ps.add(name, Tensor::filled({n}, 1.0), false); }

  void mlp(const std::string& p, std::size_t in, std::size_t hidden, std::size_t out) {
    weight(p + "fc1.w", in, hidden);
    bias(p + "fc1.b", hidden);
    weight(p + "fc2.w", hidden, out);
    bias(p + "fc2.b", out);
  }

  void stack(const std::string& p, std::size_t vocab, std::size_t max_len, std::size_t d, int layers) {
    embedding(p + "tok_emb", vocab, d);
    embedding(p + "pos_emb", max_len, d);
    for (int l = 0; l < layers; ++l) {
      const std::string b = p + "blocks." + std::to_string(l) + ".";
      gain(b + "ln1.g", d);
      bias(b + "ln1.b", d);
      weight(b + "attn.wq", d, d);
      weight(b + "attn.wk", d, d);
      weight(b + "attn.wv", d, d);
      weight(b + "attn.wo", d, d);
      bias(b + "attn.bo", d);
      gain(b + "ln2.g", d);
      bias(b + "ln2.b", d);
      mlp(b + "mlp.", d, 4 * d, d);
    }
    gain(p + "lnf.g", d);
    bias(p + "lnf.b", d);
    weight(p + "out.w", d, vocab);
    bias(p + "out.b", vocab);
  }
};

const Tensor& P(const ParamStore& ps, const std::string& name) { return ps.get(name).value; }

Tensor add_positions(const ParamStore& ps, const std::string& prefix, const Tensor& x) {
  const Tensor& pos = P(ps, prefix + "pos_emb");
  if (x.rows() > pos.rows()) {
    throw ShapeError(prefix + ": sequence length " + std::to_string(x.rows()) + " exceeds maximum " +
                     std::to_string(pos.rows()));
  }
  return add(x, slice_rows(pos, 0, x.rows()));
}

Tensor attention(const Tensor& h, const ParamStore& ps, const std::string& b, int n_heads) {
  const Tensor q = matmul(h, P(ps, b + "attn.wq"));
  const Tensor k = matmul(h, P(ps, b + "attn.wk"));
  const Tensor v = matmul(h, P(ps, b + "attn.wv"));
  const std::size_t d = h.cols();
  const std::size_t dh = d / sz(n_heads);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(sz(n_heads));
  for (int i = 0; i < n_heads; ++i) {
    const std::size_t c0 = sz(i) * dh;
    const Tensor qh = slice_cols(q, c0, c0 + dh);
    const Tensor kh = slice_cols(k, c0, c0 + dh);
    const Tensor vh = slice_cols(v, c0, c0 + dh);
    const Tensor att = causal_softmax_rows(scale(matmul(qh, transpose(kh)), inv));
    heads.push_back(matmul(att, vh));
  }
  const Tensor o = n_heads == 1 ? heads[0] : concat_cols(heads);
  return linear(o, P(ps, b + "attn.wo"), P(ps, b + "attn.bo"));
}

// Z rows of an auxiliary decoder followed by its shifted targets; returns the
// logits predicting every target.
Tensor aux_decode(const ModelBundle& bm, const std::string& prefix, const Tensor& z,
                  std::span<const std::int32_t> local_targets) {
  const std::size_t n = local_targets.size();
  if (n == 0) throw std::invalid_argument(prefix + ": empty target sequence");
  const ParamStore& ps = bm.params;
  std::vector<Tensor> parts{z};
  if (n > 1) parts.push_back(embed(local_targets.subspan(0, n - 1), P(ps, prefix + "tok_emb")));
  const Tensor x = add_positions(ps, prefix, concat_rows(parts));
  const Tensor h = transformer_stack(ps, prefix, x, bm.cfg.dec_layers, bm.cfg.dec_heads);
  const std::size_t first = z.rows() - 1;
  return linear(slice_rows(h, first, first + n), P(ps, prefix + "out.w"), P(ps, prefix + "out.b"));
}

Tensor conditioning(const ParamStore& ps, const std::string& prefix, const Tensor& V_embed, const Tensor& H) {
  if (!H.defined()) return mlp2(ps, prefix, V_embed);
  const Tensor parts[] = {V_embed, H};
  return mlp2(ps, prefix, concat_rows(parts));
}

void require_finite(const Tensor& t, const char* what) {
  if (!t.defined() || !std::isfinite(t.item())) throw NumericError(std::string("total_loss: non-finite ") + what);
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (d <= 0 || n_layers <= 0 || n_heads <= 0 || dec_layers <= 0 || dec_heads <= 0) fail("sizes must be positive");
  if (d % n_heads != 0 || d % dec_heads != 0) fail("d must be divisible by the head counts");
  if (latent_vis_count < 0 || latent_lang_count < 0) fail("latent counts must be non-negative");
  if (patch <= 0 || raster_height % patch != 0 || raster_width % patch != 0) fail("raster not divisible by patch");
  if (codebook_size <= 0) fail("codebook_size must be positive");
}

bool ModelBundle::has_group(const std::string& g) const {
  for (const auto& p : params.all()) {
    if (p.group() == g) return true;
  }
  return false;
}

ModelBundle init_bundle(const ModelConfig& cfg, const Vocab& vocab, std::uint64_t seed) {
  cfg.validate();
  if (vocab.codebook_size() != cfg.codebook_size ||
      static_cast<int>(vocab.latent_vis_ids().size()) != cfg.latent_vis_count ||
      static_cast<int>(vocab.latent_ids().size()) != cfg.latent_lang_count) {
    throw std::invalid_argument("init_bundle: vocabulary does not match the model config");
  }
  ModelBundle b;
  b.cfg = cfg;
  b.vocab_size = vocab.size();
  b.text_vocab_size = vocab.text_size();
  b.visual_base = vocab.visual_base();
  Rng rng(seed);
  Builder bld{b.params, rng};
  const std::size_t d = sz(cfg.d);
  bld.stack("backbone/", sz(vocab.size()), sz(cfg.max_seq_len), d, cfg.n_layers);
  bld.weight("patch/w", sz(cfg.patch_dim()), d);
  bld.bias("patch/b", d);
  bld.gain("patch/ln.g", d);
  bld.bias("patch/ln.b", d);
  bld.mlp("w_l/", d, d, d);
  bld.mlp("w_v/", d, d, d);
  bld.stack("dec_l/", sz(vocab.text_size()), sz(cfg.dec_max_len), d, cfg.dec_layers);
  bld.stack("dec_v/", sz(cfg.codebook_size + 2), sz(cfg.dec_max_len), d, cfg.dec_layers);
  if (cfg.with_head) bld.mlp("head/", d, d, 2 * kNumWaypoints);
  return b;
}

Tensor mlp2(const ParamStore& ps, const std::string& prefix, const Tensor& x) {
  const Tensor h = gelu(linear(x, P(ps, prefix + "fc1.w"), P(ps, prefix + "fc1.b")));
  return linear(h, P(ps, prefix + "fc2.w"), P(ps, prefix + "fc2.b"));
}

Tensor transformer_stack(const ParamStore& ps, const std::string& prefix, const Tensor& x, int n_layers,
                         int n_heads) {
  Tensor h = x;
  for (int l = 0; l < n_layers; ++l) {
    const std::string b = prefix + "blocks." + std::to_string(l) + ".";
    h = add(h, attention(layer_norm(h, P(ps, b + "ln1.g"), P(ps, b + "ln1.b")), ps, b, n_heads));
    h = add(h, mlp2(ps, b + "mlp.", layer_norm(h, P(ps, b + "ln2.g"), P(ps, b + "ln2.b"))));
  }
  return layer_norm(h, P(ps, prefix + "lnf.g"), P(ps, prefix + "lnf.b"));
}

Tensor patch_embed(const ModelBundle& b, const Tensor& patch_features) {
  const ParamStore& ps = b.params;
  return layer_norm(linear(patch_features, P(ps, "patch/w"), P(ps, "patch/b")), P(ps, "patch/ln.g"),
                    P(ps, "patch/ln.b"));
}

ForwardOutput backbone_forward(const ModelBundle& b, const TokenLayout& layout, const Tensor& patch_features,
                               std::size_t logits_from) {
  const auto T = layout.ids.size();
  if (T > sz(b.cfg.max_seq_len)) {
    throw ShapeError("backbone_forward: " + std::to_string(T) + " tokens exceed max_seq_len " +
                     std::to_string(b.cfg.max_seq_len));
  }
  auto check_span = [&](const Span& s, const char* name) {
    if (s.begin > s.end || s.end > T) throw std::out_of_range(std::string("backbone_forward: span ") + name + " out of range");
  };
  check_span(layout.image, "image");
  check_span(layout.latent_vis, "latent_vis");
  check_span(layout.latent_lang, "latent_lang");
  if (layout.image.size() != sz(b.cfg.num_patches()) || patch_features.rows() != layout.image.size()) {
    throw ShapeError("backbone_forward: image span does not match the patch grid");
  }
  const ParamStore& ps = b.params;
  const Tensor& table = P(ps, "backbone/tok_emb");
  ForwardOutput out;
  out.V_embed = patch_embed(b, patch_features);
  const std::span<const std::int32_t> ids(layout.ids);
  std::vector<Tensor> parts;
  if (layout.image.begin > 0) parts.push_back(embed(ids.subspan(0, layout.image.begin), table));
  parts.push_back(out.V_embed);
  if (layout.image.end < T) parts.push_back(embed(ids.subspan(layout.image.end), table));
  const Tensor x = add_positions(ps, "backbone/", concat_rows(parts));
  out.hidden_last = transformer_stack(ps, "backbone/", x, b.cfg.n_layers, b.cfg.n_heads);
  if (!layout.latent_vis.empty()) out.H_v = slice_rows(out.hidden_last, layout.latent_vis.begin, layout.latent_vis.end);
  if (!layout.latent_lang.empty()) {
    out.H_l = slice_rows(out.hidden_last, layout.latent_lang.begin, layout.latent_lang.end);
  }
  out.logits_from = logits_from;
  if (logits_from < T) {
    const Tensor rows = logits_from == 0 ? out.hidden_last : slice_rows(out.hidden_last, logits_from, T);
    out.logits = linear(rows, P(ps, "backbone/out.w"), P(ps, "backbone/out.b"));
  }
  return out;
}

Tensor main_loss(const ForwardOutput& out, const TokenLayout& layout) {
  const std::size_t T = layout.ids.size();
  const std::size_t n = out.logits.rows();
  if (out.logits_from + n != T) throw ShapeError("main_loss: logits must extend to the last position");
  std::vector<std::int32_t> targets(n, 0);
  std::vector<bool> mask(n, false);
  for (std::size_t r = 0; r + 1 < n; ++r) {
    const std::size_t p = out.logits_from + r;
    targets[r] = layout.ids[p + 1];
    mask[r] = layout.loss_mask[p + 1];
  }
  return cross_entropy(out.logits, targets, mask);
}

std::int32_t visual_local_id(std::int32_t id, const Vocab& vocab) {
  if (vocab.is_visual(id)) return id - vocab.visual_base();
  if (id == vocab.image_start) return vocab.codebook_size();
  if (id == vocab.image_end) return vocab.codebook_size() + 1;
  throw std::out_of_range("visual decoder target id " + std::to_string(id) + " is outside the visual vocabulary");
}

std::int32_t visual_global_id(std::int32_t local, const Vocab& vocab) {
  const int K = vocab.codebook_size();
  if (local >= 0 && local < K) return vocab.visual_base() + local;
  if (local == K) return vocab.image_start;
  if (local == K + 1) return vocab.image_end;
  throw std::out_of_range("visual decoder output " + std::to_string(local) + " out of range");
}

AuxOutput lang_aux_forward(const ModelBundle& b, const Tensor& V_embed, const Tensor& H_l,
                           std::span<const std::int32_t> target_ids) {
  for (auto id : target_ids) {
    if (id < 0 || id >= b.text_vocab_size) {
      throw std::out_of_range("language decoder target id " + std::to_string(id) + " out of range");
    }
  }
  AuxOutput out;
  out.logits = aux_decode(b, "dec_l/", conditioning(b.params, "w_l/", V_embed, H_l), target_ids);
  out.loss = cross_entropy(out.logits, target_ids);
  return out;
}

AuxOutput vis_aux_forward(const ModelBundle& b, const Tensor& V_embed, const Tensor& H_v,
                          std::span<const std::int32_t> target_ids, const Vocab& vocab) {
  std::vector<std::int32_t> local(target_ids.size());
  for (std::size_t i = 0; i < local.size(); ++i) local[i] = visual_local_id(target_ids[i], vocab);
  AuxOutput out;
  out.logits = aux_decode(b, "dec_v/", conditioning(b.params, "w_v/", V_embed, H_v), local);
  out.loss = cross_entropy(out.logits, local);
  return out;
}

Tensor total_loss(const Tensor& L_c, const Tensor& L_l, const Tensor& L_v, double lambda_l, double lambda_v) {
  require_finite(L_c, "L_c");
  require_finite(L_l, "L_l");
  require_finite(L_v, "L_v");
  return add(add(L_c, scale(L_l, lambda_l)), scale(L_v, lambda_v));
}

Tensor mlp_head_forward(const ModelBundle& b, const Tensor& h_last) {
  if (!b.has_group("head")) throw std::invalid_argument("mlp_head_forward: bundle has no regression head");
  if (h_last.dim() != 2 || h_last.rows() != 1) throw ShapeError("mlp_head_forward: input must be 1 x d");
  return reshape(mlp2(b.params, "head/", h_last), {kNumWaypoints, 2});
}

Tensor head_input(const ForwardOutput& out) {
  if (!out.H_l.defined()) throw std::invalid_argument("head_input: layout has no language latent tokens");
  const std::size_t n = out.H_l.rows();
  return slice_rows(out.H_l, n - 1, n);
}

Tensor trajectory_tensor(const Trajectory& t) {
  std::vector<double> v;
  for (const auto& w : t) {
    v.push_back(w.x);
    v.push_back(w.y);
  }
  return Tensor::from({kNumWaypoints, 2}, std::move(v));
}

std::string model_config_json(const ModelConfig& c) {
  ojson j;
  j["d"] = c.d;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["max_seq_len"] = c.max_seq_len;
  j["dec_layers"] = c.dec_layers;
  j["dec_heads"] = c.dec_heads;
  j["dec_max_len"] = c.dec_max_len;
  j["latent_vis_count"] = c.latent_vis_count;
  j["latent_lang_count"] = c.latent_lang_count;
  j["codebook_size"] = c.codebook_size;
  j["patch"] = c.patch;
  j["raster_height"] = c.raster_height;
  j["raster_width"] = c.raster_width;
  j["with_head"] = c.with_head;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  const auto j = ojson::parse(text);
  ModelConfig c;
  c.d = j.at("d");
  c.n_layers = j.at("n_layers");
  c.n_heads = j.at("n_heads");
  c.max_seq_len = j.at("max_seq_len");
  c.dec_layers = j.at("dec_layers");
  c.dec_heads = j.at("dec_heads");
  c.dec_max_len = j.at("dec_max_len");
  c.latent_vis_count = j.at("latent_vis_count");
  c.latent_lang_count = j.at("latent_lang_count");
  c.codebook_size = j.at("codebook_size");
  c.patch = j.at("patch");
  c.raster_height = j.at("raster_height");
  c.raster_width = j.at("raster_width");
  c.with_head = j.at("with_head");
  c.validate();
  return c;
}

void save_bundle(const std::filesystem::path& path, const ModelBundle& b, const std::string& config_hash) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  save_params(path, b.params);
  ojson side;
  side["config_hash"] = config_hash;
  side["model"] = ojson::parse(model_config_json(b.cfg));
  std::ofstream os(path.string() + ".json", std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string() + ".json");
  os << side.dump(2) << '\n';
}

LoadedBundle load_bundle(const std::filesystem::path& path, const Vocab& vocab) {
  std::ifstream is(path.string() + ".json", std::ios::binary);
  if (!is) throw std::runtime_error("missing checkpoint sidecar " + path.string() + ".json");
  std::stringstream ss;
  ss << is.rdbuf();
  const auto side = ojson::parse(ss.str());
  const ModelConfig cfg = model_config_from_json(side.at("model").dump());
  LoadedBundle out{init_bundle(cfg, vocab, 0), side.at("config_hash").get<std::string>()};
  load_params(path, out.bundle.params);
  return out;
}

}  // namespace onevl
