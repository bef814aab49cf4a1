#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vps/checkpoint.hpp"
#include "vps/panoptic.hpp"
#include "vps/rng.hpp"
#include "vps/tensor.hpp"

VPS_BEGIN_NAMESPACE

struct ModelConfig {
  std::size_t embed_dim = 32;
  std::size_t decoder_layers = 2;
  std::size_t heads = 4;
  std::size_t free_queries = 8;
  std::size_t patch = 2;
  std::size_t ffn_dim = 64;
  std::size_t num_classes = 5;  // excluding the no-object label

  std::size_t no_object() const { return num_classes; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class QueryRole { kFree, kTrack };

struct QuerySlot {
  Tensor embedding;  // [1 × d]
  QueryRole role = QueryRole::kFree;
  std::optional<std::uint64_t> track_id;  // present iff role == kTrack
};

// Per-query outputs for one frame; rows are aligned with the query list.
struct Prediction {
  Tensor class_logits;  // [Q × (C+1)], last column is no-object
  Tensor mask_logits;   // [Q × H·W] at frame resolution
  Tensor embeddings;    // [Q × d] decoder outputs, fed forward as track queries
  int width = 0;
  int height = 0;

  std::size_t query_count() const { return class_logits.dim(0); }
};

// Toy mask-classification network: patch embedding plus a pointwise MLP for
// pixels, a post-norm transformer decoder over query slots, a linear class
// head, and masks from dot products between projected query outputs and
// pixel embeddings.
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);
  // Parameters are shared handles; copying would alias weights.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }

  // [H'·W' × d], H' = H / patch.
  Tensor encode_pixels(const Image& frame) const;
  // [Q × d]; row order follows the query order.
  Tensor run_decoder(const Tensor& pixels, std::span<const QuerySlot> queries) const;
  Prediction predict(const Image& frame, std::span<const QuerySlot> queries) const;

  // The N_q learned free queries (rows of the free-query table).
  std::vector<QuerySlot> free_queries() const;

  NamedTensors& parameters() { return params_; }
  const NamedTensors& parameters() const { return params_; }
  Tensor& parameter(const std::string& name);
  const Tensor& parameter(const std::string& name) const;

  NamedTensors state() const;
  // Copies values; throws CheckpointError on missing names or shape mismatch.
  void load_state(const NamedTensors& entries);
  void zero_grad();

 private:
  struct Linear {
    Tensor weight;  // [in × out]
    Tensor bias;    // [out]
    Tensor apply(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }
  };
  struct Norm {
    Tensor gain, bias;
    Tensor apply(const Tensor& x) const { return layer_norm(x, gain, bias); }
  };
  struct Attention {
    Linear q, k, v, out;
  };
  struct DecoderLayer {
    Attention self_attn, cross_attn;
    Norm norm1, norm2, norm3;
    Linear ffn1, ffn2;
  };

  Tensor add_param(const std::string& name, Shape shape);
  Linear make_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  Norm make_norm(const std::string& name, std::size_t dim);
  Tensor attend(const Attention& attn, const Tensor& queries, const Tensor& memory) const;

  ModelConfig config_;
  NamedTensors params_;
  Linear patch_embed_, pixel_mlp1_, pixel_mlp2_;
  std::vector<DecoderLayer> layers_;
  Tensor query_table_;  // [N_q × d]
  Linear class_head_, mask_mlp1_, mask_mlp2_;
};

// Patch vectors of a frame, pixel values scaled to [-1, 1]: [H'·W' × 3·p²].
Tensor patchify(const Image& frame, std::size_t patch);
// 2-D sinusoidal encoding, [grid_h·grid_w × d]; the first half of the
// channels encodes rows, the second half columns.
Tensor sinusoidal_encoding_2d(std::size_t grid_h, std::size_t grid_w, std::size_t dim);

VPS_END_NAMESPACE
