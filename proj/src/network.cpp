#include "vps/network.hpp"

#include <cmath>

#include "vps/error.hpp"

VPS_BEGIN_NAMESPACE

void ModelConfig::validate() const {
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw ConfigError("model: embed_dim " + std::to_string(embed_dim) +
                      " must be a positive multiple of heads " + std::to_string(heads));
  }
  if (free_queries < 1) throw ConfigError("model: need at least one free query");
  if (num_classes < 1) throw ConfigError("model: need at least one class");
  if (patch < 1) throw ConfigError("model: patch size must be positive");
  if (decoder_layers < 1) throw ConfigError("model: need at least one decoder layer");
  if (ffn_dim < 1) throw ConfigError("model: ffn_dim must be positive");
}

Tensor patchify(const Image& frame, std::size_t patch) {
  const auto w = static_cast<std::size_t>(frame.width);
  const auto h = static_cast<std::size_t>(frame.height);
  if (patch == 0 || w == 0 || h == 0 || w % patch != 0 || h % patch != 0) {
    throw ShapeError("frame " + std::to_string(w) + "x" + std::to_string(h) +
                     " is not divisible by patch size " + std::to_string(patch));
  }
  const std::size_t gw = w / patch, gh = h / patch;
  const std::size_t cols = 3 * patch * patch;
  std::vector<Real> values(gh * gw * cols);
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      Real* row = values.data() + (gy * gw + gx) * cols;
      std::size_t c = 0;
      for (std::size_t dy = 0; dy < patch; ++dy)
        for (std::size_t dx = 0; dx < patch; ++dx) {
          const std::uint8_t* px = frame.pixel(static_cast<int>(gx * patch + dx),
                                               static_cast<int>(gy * patch + dy));
          for (int ch = 0; ch < 3; ++ch) row[c++] = Real(px[ch]) / Real(127.5) - Real(1);
        }
    }
  return Tensor::from({gh * gw, cols}, std::move(values));
}

Tensor sinusoidal_encoding_2d(std::size_t grid_h, std::size_t grid_w, std::size_t dim) {
  std::vector<Real> values(grid_h * grid_w * dim, Real(0));
  const std::size_t half = dim / 2;
  const std::size_t freqs = half / 2;
  for (std::size_t y = 0; y < grid_h; ++y)
    for (std::size_t x = 0; x < grid_w; ++x) {
      Real* row = values.data() + (y * grid_w + x) * dim;
      for (std::size_t i = 0; i < freqs; ++i) {
        const double f = std::pow(100.0, -static_cast<double>(i) / static_cast<double>(freqs));
        row[2 * i] = static_cast<Real>(std::sin(static_cast<double>(y) * f));
        row[2 * i + 1] = static_cast<Real>(std::cos(static_cast<double>(y) * f));
        row[half + 2 * i] = static_cast<Real>(std::sin(static_cast<double>(x) * f));
        row[half + 2 * i + 1] = static_cast<Real>(std::cos(static_cast<double>(x) * f));
      }
    }
  return Tensor::from({grid_h * grid_w, dim}, std::move(values));
}

Tensor Model::add_param(const std::string& name, Shape shape) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  params_.emplace_back(name, t);
  return t;
}

Model::Linear Model::make_linear(const std::string& name, std::size_t in, std::size_t out,
                                 Rng& rng) {
  Linear l{add_param(name + ".weight", {in, out}), add_param(name + ".bias", {out})};
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (Real& v : l.weight.data()) v = static_cast<Real>(rng.uniform(-bound, bound));
  return l;
}

Model::Norm Model::make_norm(const std::string& name, std::size_t dim) {
  Norm n{add_param(name + ".gain", {dim}), add_param(name + ".bias", {dim})};
  for (Real& v : n.gain.data()) v = Real(1);
  return n;
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.embed_dim;
  const std::size_t patch_dim = 3 * config_.patch * config_.patch;

  patch_embed_ = make_linear("encoder.patch", patch_dim, d, rng);
  pixel_mlp1_ = make_linear("encoder.mlp1", d, d, rng);
  pixel_mlp2_ = make_linear("encoder.mlp2", d, d, rng);

  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    const std::string p = "decoder." + std::to_string(l) + ".";
    DecoderLayer layer;
    for (auto [attn, tag] : {std::pair{&layer.self_attn, "self_attn"},
                             std::pair{&layer.cross_attn, "cross_attn"}}) {
      attn->q = make_linear(p + tag + ".q", d, d, rng);
      attn->k = make_linear(p + tag + ".k", d, d, rng);
      attn->v = make_linear(p + tag + ".v", d, d, rng);
      attn->out = make_linear(p + tag + ".out", d, d, rng);
    }
    layer.norm1 = make_norm(p + "norm1", d);
    layer.norm2 = make_norm(p + "norm2", d);
    layer.norm3 = make_norm(p + "norm3", d);
    layer.ffn1 = make_linear(p + "ffn1", d, config_.ffn_dim, rng);
    layer.ffn2 = make_linear(p + "ffn2", config_.ffn_dim, d, rng);
    layers_.push_back(std::move(layer));
  }

  query_table_ = add_param("queries", {config_.free_queries, d});
  for (Real& v : query_table_.data()) v = static_cast<Real>(rng.normal(0.0, 0.02));

  class_head_ = make_linear("head.class", d, config_.num_classes + 1, rng);
  mask_mlp1_ = make_linear("head.mask1", d, d, rng);
  mask_mlp2_ = make_linear("head.mask2", d, d, rng);
}

Tensor& Model::parameter(const std::string& name) {
  for (auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw ConfigError("model has no parameter '" + name + "'");
}

const Tensor& Model::parameter(const std::string& name) const {
  return const_cast<Model*>(this)->parameter(name);
}

NamedTensors Model::state() const {
  NamedTensors out;
  for (const auto& [name, t] : params_) out.emplace_back(name, t.detach());
  return out;
}

void Model::load_state(const NamedTensors& entries) {
  if (entries.size() != params_.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(entries.size()) +
                          " tensors, model expects " + std::to_string(params_.size()) +
                          " (checkpoint format v" + std::to_string(kCheckpointVersion) + ")");
  }
  for (auto& [name, param] : params_) {
    const Tensor* found = nullptr;
    for (const auto& [n, t] : entries) {
      if (n == name) found = &t;
    }
    if (found == nullptr) {
      throw CheckpointError("checkpoint is missing parameter '" + name + "' (format v" +
                            std::to_string(kCheckpointVersion) + ")");
    }
    if (found->shape() != param.shape()) {
      throw CheckpointError("parameter '" + name + "' has shape " +
                            shape_string(found->shape()) + " in checkpoint but " +
                            shape_string(param.shape()) + " in model (format v" +
                            std::to_string(kCheckpointVersion) + ")");
    }
    std::copy(found->data().begin(), found->data().end(), param.data().begin());
  }
}

void Model::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

std::vector<QuerySlot> Model::free_queries() const {
  std::vector<QuerySlot> slots;
  for (std::size_t i = 0; i < config_.free_queries; ++i) {
    const std::size_t idx[] = {i};
    slots.push_back({rows(query_table_, idx), QueryRole::kFree, std::nullopt});
  }
  return slots;
}

Tensor Model::encode_pixels(const Image& frame) const {
  const Tensor patches = patchify(frame, config_.patch);
  const std::size_t gh = static_cast<std::size_t>(frame.height) / config_.patch;
  const std::size_t gw = static_cast<std::size_t>(frame.width) / config_.patch;
  const Tensor pos = sinusoidal_encoding_2d(gh, gw, config_.embed_dim);
  const Tensor h0 = add(patch_embed_.apply(patches), pos);
  return pixel_mlp2_.apply(gelu(pixel_mlp1_.apply(h0)));
}

Tensor Model::attend(const Attention& attn, const Tensor& queries, const Tensor& memory) const {
  const std::size_t d = config_.embed_dim;
  const std::size_t dh = d / config_.heads;
  const Tensor q = attn.q.apply(queries);
  const Tensor k = attn.k.apply(memory);
  const Tensor v = attn.v.apply(memory);
  const Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(dh));
  std::vector<Tensor> heads;
  heads.reserve(config_.heads);
  for (std::size_t h = 0; h < config_.heads; ++h) {
    const Tensor qh = slice(q, 1, h * dh, (h + 1) * dh);
    const Tensor kh = slice(k, 1, h * dh, (h + 1) * dh);
    const Tensor vh = slice(v, 1, h * dh, (h + 1) * dh);
    const Tensor weights = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), 1);
    heads.push_back(matmul(weights, vh));
  }
  const Tensor merged = heads.size() == 1 ? heads[0] : concat(heads, 1);
  return attn.out.apply(merged);
}

Tensor Model::run_decoder(const Tensor& pixels, std::span<const QuerySlot> queries) const {
  if (queries.empty()) throw ShapeError("run_decoder: empty query list");
  const std::size_t d = config_.embed_dim;
  if (pixels.rank() != 2 || pixels.dim(1) != d) {
    throw ShapeError("run_decoder: pixel embeddings " + shape_string(pixels.shape()) +
                     " do not have width " + std::to_string(d));
  }
  std::vector<Tensor> rows_in;
  rows_in.reserve(queries.size());
  for (const auto& slot : queries) {
    if (slot.embedding.numel() != d) {
      throw ShapeError("run_decoder: query embedding " + shape_string(slot.embedding.shape()) +
                       " does not have width " + std::to_string(d));
    }
    rows_in.push_back(slot.embedding.rank() == 2 ? slot.embedding : reshape(slot.embedding, {1, d}));
  }
  Tensor x = rows_in.size() == 1 ? rows_in[0] : concat(rows_in, 0);
  for (const auto& layer : layers_) {
    x = layer.norm1.apply(add(x, attend(layer.self_attn, x, x)));
    x = layer.norm2.apply(add(x, attend(layer.cross_attn, x, pixels)));
    x = layer.norm3.apply(add(x, layer.ffn2.apply(gelu(layer.ffn1.apply(x)))));
  }
  return x;
}

Prediction Model::predict(const Image& frame, std::span<const QuerySlot> queries) const {
  const Tensor pixels = encode_pixels(frame);
  Prediction p;
  p.width = frame.width;
  p.height = frame.height;
  p.embeddings = run_decoder(pixels, queries);
  p.class_logits = class_head_.apply(p.embeddings);
  const Tensor mask_embed = mask_mlp2_.apply(gelu(mask_mlp1_.apply(p.embeddings)));
  const Tensor low = matmul(mask_embed, transpose(pixels));
  if (config_.patch == 1) {
    p.mask_logits = low;
  } else {
    const std::size_t gh = static_cast<std::size_t>(frame.height) / config_.patch;
    const std::size_t gw = static_cast<std::size_t>(frame.width) / config_.patch;
    p.mask_logits = upsample_bilinear(low, gh, gw, static_cast<std::size_t>(frame.height),
                                      static_cast<std::size_t>(frame.width));
  }
  return p;
}

VPS_END_NAMESPACE
