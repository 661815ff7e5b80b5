#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nt/params.hpp"
#include "nt/synthgen.hpp"
#include "nt/tensor.hpp"

namespace nt {

enum class Head { SoftmaxMulticlass, SigmoidMultilabel, None };

struct MlpSpec {
    std::vector<int> widths;  // [input, hidden..., output]
    Head head = Head::None;

    int input_width() const { return widths.front(); }
    int output_width() const { return widths.back(); }
    void validate() const;
};

// Two hidden layers by default; the output space is where K_ij lives.
struct ProjectionSpec {
    int input_width = 0;
    int hidden_width = 512;
    int output_width = 0;

    MlpSpec as_mlp() const {
        return MlpSpec{{input_width, hidden_width, hidden_width, output_width},
                       Head::None};
    }
    void validate() const { as_mlp().validate(); }
};

struct DecoderSpec {
    int vocab = 0;
    int emb_width = 16;
    int state_width = 24;
    int num_regions = 0;
    int region_width = 0;

    int attn_width() const { return state_width; }
    void validate() const;
};

struct ModelBundle {
    TaskKind task = TaskKind::Multiclass;
    MlpSpec mlp;            // multiclass / multilabel
    DecoderSpec decoder;    // sequence
    ProjectionSpec projection;
    ParamSet task_params;
    ParamSet projection_params;
    double task_lr = 1e-3;
    double projection_lr = 1e-4;  // task_lr / 10 by default
    std::uint64_t seed = 0;       // initialization seed, recorded in checkpoints
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases; one derived
// RNG stream per parameter name so layouts can change without reshuffling
// everything.
void init_mlp_params(const MlpSpec& spec, std::uint64_t seed, ParamSet& out);
void init_projection_params(const ProjectionSpec& spec, std::uint64_t seed,
                            ParamSet& out);
void init_decoder_params(const DecoderSpec& spec, std::uint64_t seed,
                         ParamSet& out);

// Logits (no head applied); input is a 1D feature vector or a 2D batch.
Tensor mlp_forward(Binder& binder, const MlpSpec& spec, ParamSet& params,
                   const Tensor& input, bool trainable = true);

// r(x): embedding of one feature vector.
Tensor project(Binder& binder, const ProjectionSpec& spec, ParamSet& params,
               const Tensor& features, bool trainable = true);

// Extra embedding-table row used as the start-of-sequence input.
inline int start_token(const DecoderSpec& spec) { return spec.vocab; }

struct DecoderStep {
    Tensor log_probs;  // [vocab]
    Tensor alpha;      // scalar, sum of the region attention weights
    Tensor state;      // [state_width]
};

// One decode step: gated recurrent cell, additive attention over the k region
// vectors plus a learned sentinel slot (the sentinel absorbs non-visual mass,
// so alpha < 1 is reachable).
DecoderStep decoder_step(Binder& binder, const DecoderSpec& spec, ParamSet& params,
                         const Tensor& state, int prev_token, const Tensor& regions,
                         const Tensor& global_feat, bool trainable = true);

struct SequenceScore {
    std::vector<Tensor> log_probs;  // per-token log p(y_t | y_<t, x)
    std::vector<Tensor> alphas;     // per-token alpha_t
};

// Teacher-forced scoring of one token sequence (must end with kEndToken).
SequenceScore sequence_log_prob(Binder& binder, const DecoderSpec& spec,
                                ParamSet& params, const Tensor& regions,
                                const Tensor& global_feat,
                                const Annotation& tokens, bool trainable = true);

struct BeamHypothesis {
    Annotation tokens;  // includes the terminating end token if reached
    double log_prob = 0.0;
};

// Forward-only beam decode; ties broken toward the lexicographically smaller
// token sequence so results are reproducible.
std::vector<BeamHypothesis> beam_search(const DecoderSpec& spec, ParamSet& params,
                                        const std::vector<double>& regions,
                                        const std::vector<double>& global_feat,
                                        int beam_size, int max_length);

// Convenience: forward-only scoring of a candidate sequence (used by the
// retrieval metric); returns the total log-probability.
double sequence_total_log_prob(const DecoderSpec& spec, ParamSet& params,
                               const std::vector<double>& regions,
                               const std::vector<double>& global_feat,
                               const Annotation& tokens);

}  // namespace nt
