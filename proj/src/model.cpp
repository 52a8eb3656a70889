#include "mvlt/model.hpp"

#include <algorithm>

#include "mvlt/error.hpp"
#include "mvlt/ops.hpp"

namespace mvlt {
namespace {

Tensor trunc_normal(Shape shape, double std, Rng& rng) {
  Buffer data(shape_numel(shape));
  for (auto& v : data) {
    double z;
    do {
      z = rng.normal();
    } while (z < -2.0 || z > 2.0);
    v = z * std;
  }
  return Tensor(std::move(shape), std::move(data));
}

Tensor normal(Shape shape, double std, Rng& rng) {
  Buffer data(shape_numel(shape));
  for (auto& v : data) v = rng.normal() * std;
  return Tensor(std::move(shape), std::move(data));
}

// Slot i of the visual sequence reads row map[i] of [projected visible rows;
// mask token]. Also validates that the plan partitions 0..n-1.
std::vector<std::size_t> visual_slot_map(const PatchMaskPlan& plan, std::size_t n) {
  if (plan.count() != n) {
    throw ContractError("patch plan covers " + std::to_string(plan.count()) + " slots, model has " +
                        std::to_string(n));
  }
  std::vector<std::size_t> map(n, n + 1);
  for (std::size_t k = 0; k < plan.unmasked.size(); ++k) {
    const auto g = plan.unmasked[k];
    if (g >= n || map[g] != n + 1) throw ContractError("patch plan is not a partition");
    map[g] = k;
  }
  for (auto g : plan.masked) {
    if (g >= n || map[g] != n + 1) throw ContractError("patch plan is not a partition");
    map[g] = plan.unmasked.size();
  }
  return map;
}

}  // namespace

MvltModel::MvltModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config), charset_(config.num_classes) {
  config_.validate();
  Rng rng = Rng::derive(seed, {0x696e6974});
  const auto& c = config_;
  const double sd = c.init_std;
  const std::size_t n = c.num_patches(), pd = c.patch_dim(), d1 = c.enc_dim, d2 = c.dec_dim;

  params_.add("patch_embed.weight", trunc_normal({pd, d1}, sd, rng), true, 0);
  params_.add("patch_embed.bias", Tensor::zeros({d1}), false, 0);
  params_.add("encoder.pos_embed", normal({n, d1}, sd, rng), false, 0);
  for (std::size_t i = 0; i < c.enc_depth; ++i) {
    const std::string prefix = "encoder.blocks." + std::to_string(i) + ".";
    add_block(prefix, d1, static_cast<int>(i) + 1, rng);
    encoder_blocks_.push_back({prefix, c.enc_heads});
  }
  params_.add("encoder.norm.weight", Tensor::full({d1}, 1.0), false);
  params_.add("encoder.norm.bias", Tensor::zeros({d1}), false);
  params_.add("enc_to_dec.weight", trunc_normal({d1, d2}, sd, rng), true);
  params_.add("enc_to_dec.bias", Tensor::zeros({d2}), false);

  params_.add("decoder.mask_token", normal({1, d2}, sd, rng), false);
  params_.add("decoder.visual_pos", normal({n, d2}, sd, rng), false);
  params_.add("decoder.char_embed", trunc_normal({c.num_classes + 1, d2}, sd, rng), false);
  params_.add("decoder.text_pos", normal({c.max_len, d2}, sd, rng), false);
  for (std::size_t i = 0; i < c.dec_depth; ++i) {
    const std::string prefix = "decoder.blocks." + std::to_string(i) + ".";
    add_block(prefix, d2, std::nullopt, rng);
    decoder_blocks_.push_back({prefix, c.dec_heads});
  }
  params_.add("decoder.norm.weight", Tensor::full({d2}, 1.0), false);
  params_.add("decoder.norm.bias", Tensor::zeros({d2}), false);
  params_.add("pixel_head.weight", trunc_normal({d2, pd}, sd, rng), true);
  params_.add("pixel_head.bias", Tensor::zeros({pd}), false);
  params_.add("char_head.weight", trunc_normal({d2, c.num_classes}, sd, rng), true);
  params_.add("char_head.bias", Tensor::zeros({c.num_classes}), false);
  params_.add("correction.weight", trunc_normal({c.num_classes, d2}, sd, rng), true);
  params_.add("correction.bias", Tensor::zeros({d2}), false);
  params_.set_top_layer(static_cast<int>(c.enc_depth) + 1);
}

void MvltModel::add_block(const std::string& prefix, std::size_t dim, std::optional<int> layer,
                          Rng& rng) {
  const double sd = config_.init_std;
  const std::size_t hidden = dim * config_.mlp_ratio;
  params_.add(prefix + "norm1.weight", Tensor::full({dim}, 1.0), false, layer);
  params_.add(prefix + "norm1.bias", Tensor::zeros({dim}), false, layer);
  params_.add(prefix + "attn.qkv.weight", trunc_normal({dim, 3 * dim}, sd, rng), true, layer);
  params_.add(prefix + "attn.qkv.bias", Tensor::zeros({3 * dim}), false, layer);
  params_.add(prefix + "attn.proj.weight", trunc_normal({dim, dim}, sd, rng), true, layer);
  params_.add(prefix + "attn.proj.bias", Tensor::zeros({dim}), false, layer);
  params_.add(prefix + "norm2.weight", Tensor::full({dim}, 1.0), false, layer);
  params_.add(prefix + "norm2.bias", Tensor::zeros({dim}), false, layer);
  params_.add(prefix + "mlp.fc1.weight", trunc_normal({dim, hidden}, sd, rng), true, layer);
  params_.add(prefix + "mlp.fc1.bias", Tensor::zeros({hidden}), false, layer);
  params_.add(prefix + "mlp.fc2.weight", trunc_normal({hidden, dim}, sd, rng), true, layer);
  params_.add(prefix + "mlp.fc2.bias", Tensor::zeros({dim}), false, layer);
}

Tensor MvltModel::run_block(const Block& b, const Tensor& x) const {
  const double eps = config_.layer_norm_eps;
  const std::size_t dim = x.cols();
  Tensor h = ops::layer_norm(x, p(b.prefix + "norm1.weight"), p(b.prefix + "norm1.bias"), eps);
  Tensor qkv = ops::linear(h, p(b.prefix + "attn.qkv.weight"), p(b.prefix + "attn.qkv.bias"));
  const std::size_t sizes[] = {dim, dim, dim};
  auto parts = ops::split(qkv, 1, sizes);
  Tensor attn = ops::attention(parts[0], parts[1], parts[2], b.heads);
  Tensor y = ops::add(x, ops::linear(attn, p(b.prefix + "attn.proj.weight"),
                                     p(b.prefix + "attn.proj.bias")));
  h = ops::layer_norm(y, p(b.prefix + "norm2.weight"), p(b.prefix + "norm2.bias"), eps);
  h = ops::gelu(ops::linear(h, p(b.prefix + "mlp.fc1.weight"), p(b.prefix + "mlp.fc1.bias")));
  return ops::add(y, ops::linear(h, p(b.prefix + "mlp.fc2.weight"), p(b.prefix + "mlp.fc2.bias")));
}

Tensor MvltModel::encode_masked(const Tensor& patches, const PatchMaskPlan& plan) const {
  const std::size_t n = config_.num_patches();
  if (patches.rank() != 2 || patches.rows() != n || patches.cols() != config_.patch_dim()) {
    throw DimensionError("expected patches [" + std::to_string(n) + ", " +
                         std::to_string(config_.patch_dim()) + "], got " + shape_str(patches.shape()));
  }
  visual_slot_map(plan, n);
  if (plan.unmasked.empty()) throw ContractError("patch plan leaves no visible patch");
  Tensor x = ops::gather_rows(patches, plan.unmasked);
  x = ops::add(ops::linear(x, p("patch_embed.weight"), p("patch_embed.bias")),
               ops::gather_rows(p("encoder.pos_embed"), plan.unmasked));
  for (const auto& b : encoder_blocks_) x = run_block(b, x);
  return ops::layer_norm(x, p("encoder.norm.weight"), p("encoder.norm.bias"), config_.layer_norm_eps);
}

Tensor MvltModel::encode_full(const Tensor& patches) const {
  return encode_masked(patches, empty_patch_mask(config_.num_patches()));
}

void MvltModel::run_decoder(const Tensor& visual, const PatchMaskPlan& plan,
                            const Tensor& text_embeddings, DecoderOutput& out) const {
  const std::size_t n = config_.num_patches(), l = config_.max_len;
  const auto map = visual_slot_map(plan, n);
  if (visual.rank() != 2 || visual.rows() != plan.unmasked.size() || visual.cols() != config_.enc_dim) {
    throw DimensionError("decoder expects visual features [" + std::to_string(plan.unmasked.size()) +
                         ", " + std::to_string(config_.enc_dim) + "], got " + shape_str(visual.shape()));
  }
  if (text_embeddings.rows() != l || text_embeddings.cols() != config_.dec_dim) {
    throw DimensionError("decoder expects text embeddings [" + std::to_string(l) + ", " +
                         std::to_string(config_.dec_dim) + "], got " +
                         shape_str(text_embeddings.shape()));
  }
  Tensor source = ops::linear(visual, p("enc_to_dec.weight"), p("enc_to_dec.bias"));
  if (!plan.masked.empty()) {
    const Tensor pieces[] = {source, p("decoder.mask_token")};
    source = ops::concat(pieces, 0);
  }
  Tensor vis = ops::add(ops::gather_rows(source, map), p("decoder.visual_pos"));
  Tensor txt = ops::add(text_embeddings, p("decoder.text_pos"));
  const Tensor seq_parts[] = {vis, txt};
  Tensor x = ops::concat(seq_parts, 0);
  for (const auto& b : decoder_blocks_) x = run_block(b, x);
  x = ops::layer_norm(x, p("decoder.norm.weight"), p("decoder.norm.bias"), config_.layer_norm_eps);
  const std::size_t sizes[] = {n, l};
  auto halves = ops::split(x, 0, sizes);
  out.pixels = ops::linear(halves[0], p("pixel_head.weight"), p("pixel_head.bias"));
  out.text_logits = ops::linear(halves[1], p("char_head.weight"), p("char_head.bias"));
  if (!plan.masked.empty()) out.pixels_masked = ops::gather_rows(out.pixels, plan.masked);
  if (!plan.unmasked.empty()) out.pixels_unmasked = ops::gather_rows(out.pixels, plan.unmasked);
}

DecoderOutput MvltModel::decode(const Tensor& visual, const PatchMaskPlan& patch_plan,
                                std::span<const std::size_t> text_targets,
                                const TextMaskPlan& text_plan) const {
  if (text_targets.size() != config_.max_len) {
    throw DimensionError("expected " + std::to_string(config_.max_len) + " text targets, got " +
                         std::to_string(text_targets.size()));
  }
  const auto ids = masked_text_input(text_targets, text_plan, charset_);
  for (auto id : ids) {
    if (id > charset_.mask_token()) throw IndexError("text id " + std::to_string(id) + " out of range");
  }
  DecoderOutput out;
  run_decoder(visual, patch_plan, ops::gather_rows(p("decoder.char_embed"), ids), out);
  if (!text_plan.masked.empty()) out.text_masked = ops::gather_rows(out.text_logits, text_plan.masked);
  if (!text_plan.unmasked.empty()) {
    out.text_unmasked = ops::gather_rows(out.text_logits, text_plan.unmasked);
  }
  return out;
}

DecoderOutput MvltModel::decode_embedded(const Tensor& visual, const PatchMaskPlan& patch_plan,
                                         const Tensor& text_embeddings) const {
  DecoderOutput out;
  run_decoder(visual, patch_plan, text_embeddings, out);
  out.text_unmasked = out.text_logits;
  return out;
}

std::vector<Tensor> MvltModel::iterative_correct(const Tensor& v, std::size_t iterations) const {
  const auto plan = empty_patch_mask(config_.num_patches());
  const std::vector<std::size_t> blank(config_.max_len, charset_.eos());
  std::vector<Tensor> logits;
  logits.push_back(decode(v, plan, blank, full_text_mask(config_.max_len)).text_logits);
  for (std::size_t k = 1; k <= iterations; ++k) {
    Tensor prob = ops::softmax(logits.back().detach(), 1);
    Tensor emb = ops::linear(prob, p("correction.weight"), p("correction.bias"));
    logits.push_back(decode_embedded(v, plan, emb).text_logits);
  }
  return logits;
}

std::vector<std::string> MvltModel::decoder_parameter_names() const {
  std::vector<std::string> names;
  for (const auto& prm : params_) {
    if (prm.name.starts_with("decoder.") || prm.name.starts_with("enc_to_dec.") ||
        prm.name.starts_with("pixel_head.") || prm.name.starts_with("char_head.")) {
      names.push_back(prm.name);
    }
  }
  return names;
}

}  // namespace mvlt
