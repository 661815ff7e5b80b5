#include "nt/models.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "nt/rng.hpp"

namespace nt {

void MlpSpec::validate() const {
    if (widths.size() < 2)
        throw std::invalid_argument("MlpSpec: need at least input and output widths");
    for (int w : widths)
        if (w <= 0) throw std::invalid_argument("MlpSpec: zero-width layer");
}

void DecoderSpec::validate() const {
    if (vocab <= 1) throw std::invalid_argument("DecoderSpec: vocab must be > 1");
    if (emb_width <= 0 || state_width <= 0 || region_width <= 0)
        throw std::invalid_argument("DecoderSpec: zero-width component");
    if (num_regions < 1)
        throw std::invalid_argument("DecoderSpec: need at least one region");
}

namespace {

void fill_uniform(ParamTensor& p, int fan_in, Rng rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : p.value) v = rng.uniform(-bound, bound);
}

void add_linear(ParamSet& out, const std::string& prefix, int in_w, int out_w,
                const Rng& root) {
    ParamTensor& w = out.add(prefix + ".w", {in_w, out_w});
    fill_uniform(w, in_w, root.split(prefix + ".w"));
    out.add(prefix + ".b", {out_w});  // zero-init
}

Tensor linear(Binder& binder, ParamSet& params, const std::string& prefix,
              const Tensor& x, bool trainable) {
    Tensor w = binder.bind(params.at(prefix + ".w"), trainable);
    Tensor b = binder.bind(params.at(prefix + ".b"), trainable);
    return add(matmul(x, w), b);
}

std::string layer_name(std::size_t i) { return "layer" + std::to_string(i); }

}  // namespace

void init_mlp_params(const MlpSpec& spec, std::uint64_t seed, ParamSet& out) {
    spec.validate();
    Rng root(seed, "init");
    for (std::size_t i = 0; i + 1 < spec.widths.size(); ++i)
        add_linear(out, layer_name(i), spec.widths[i], spec.widths[i + 1], root);
}

void init_projection_params(const ProjectionSpec& spec, std::uint64_t seed,
                            ParamSet& out) {
    init_mlp_params(spec.as_mlp(), seed, out);
}

void init_decoder_params(const DecoderSpec& spec, std::uint64_t seed, ParamSet& out) {
    spec.validate();
    Rng root(seed, "init");
    int xin = spec.emb_width + spec.region_width;
    int sw = spec.state_width;
    int rw = spec.region_width;
    int aw = spec.attn_width();

    ParamTensor& emb = out.add("embed", {spec.vocab + 1, spec.emb_width});
    fill_uniform(emb, spec.emb_width, root.split("embed"));

    add_linear(out, "cell.update_x", xin, sw, root);
    ParamTensor& uu = out.add("cell.update_h", {sw, sw});
    fill_uniform(uu, sw, root.split("cell.update_h"));
    add_linear(out, "cell.cand_x", xin, sw, root);
    ParamTensor& uc = out.add("cell.cand_h", {sw, sw});
    fill_uniform(uc, sw, root.split("cell.cand_h"));

    ParamTensor& wv = out.add("attn.region", {rw, aw});
    fill_uniform(wv, rw, root.split("attn.region"));
    ParamTensor& wh = out.add("attn.state", {sw, aw});
    fill_uniform(wh, sw, root.split("attn.state"));
    out.add("attn.b", {aw});
    ParamTensor& wa = out.add("attn.score", {aw});
    fill_uniform(wa, aw, root.split("attn.score"));
    ParamTensor& sent = out.add("attn.sentinel", {rw});
    fill_uniform(sent, rw, root.split("attn.sentinel"));

    ParamTensor& wc = out.add("out.context", {rw, sw});
    fill_uniform(wc, rw, root.split("out.context"));
    add_linear(out, "out.logits", sw, spec.vocab, root);
}

Tensor mlp_forward(Binder& binder, const MlpSpec& spec, ParamSet& params,
                   const Tensor& input, bool trainable) {
    const Shape& in_shape = input.shape();
    int width = in_shape.size() == 2 ? in_shape[1] : in_shape[0];
    if (in_shape.size() > 2 || width != spec.input_width())
        throw std::invalid_argument("mlp_forward: input " + shape_str(in_shape) +
                                    " does not match spec width " +
                                    std::to_string(spec.input_width()));
    Tensor h = input;
    std::size_t layers = spec.widths.size() - 1;
    for (std::size_t i = 0; i < layers; ++i) {
        h = linear(binder, params, layer_name(i), h, trainable);
        if (i + 1 < layers) h = relu(h);
    }
    return h;
}

Tensor project(Binder& binder, const ProjectionSpec& spec, ParamSet& params,
               const Tensor& features, bool trainable) {
    MlpSpec mlp = spec.as_mlp();
    return mlp_forward(binder, mlp, params, features, trainable);
}

DecoderStep decoder_step(Binder& binder, const DecoderSpec& spec, ParamSet& params,
                         const Tensor& state, int prev_token, const Tensor& regions,
                         const Tensor& global_feat, bool trainable) {
    if (prev_token < 0 || prev_token > spec.vocab)
        throw std::out_of_range("decoder_step: token " + std::to_string(prev_token) +
                                " outside vocabulary of " + std::to_string(spec.vocab));
    const Shape& rs = regions.shape();
    if (rs.size() != 2 || rs[0] != spec.num_regions || rs[1] != spec.region_width)
        throw std::invalid_argument("decoder_step: regions " + shape_str(rs) +
                                    " do not match spec");

    Tensor emb = binder.bind(params.at("embed"), trainable);
    Tensor x = concat(gather_row(emb, prev_token), global_feat);

    Tensor u = sigmoid(add(linear(binder, params, "cell.update_x", x, trainable),
                           matmul(state, binder.bind(params.at("cell.update_h"), trainable))));
    Tensor c = tanh(add(linear(binder, params, "cell.cand_x", x, trainable),
                        matmul(state, binder.bind(params.at("cell.cand_h"), trainable))));
    // h' = u*c + (1-u)*h
    Tensor one_minus_u = add_scalar(neg(u), 1.0);
    Tensor h = add(mul(u, c), mul(one_minus_u, state));

    // Additive attention over k regions plus the learned sentinel slot.
    Tensor wv = binder.bind(params.at("attn.region"), trainable);
    Tensor wh = binder.bind(params.at("attn.state"), trainable);
    Tensor ab = binder.bind(params.at("attn.b"), trainable);
    Tensor wa = binder.bind(params.at("attn.score"), trainable);
    Tensor sentinel = binder.bind(params.at("attn.sentinel"), trainable);

    Tensor key = add(matmul(h, wh), ab);                       // [attn]
    Tensor region_scores = matmul(tanh(add(matmul(regions, wv), key)), wa);  // [k]
    Tensor sentinel_score = dot(tanh(add(matmul(sentinel, wv), key)), wa);   // scalar
    Tensor weights = exp(log_softmax(concat(region_scores, sentinel_score)));  // [k+1]

    Graph& g = binder.graph();
    std::vector<double> mask(static_cast<std::size_t>(spec.num_regions) + 1, 1.0);
    mask.back() = 0.0;
    Tensor alpha = dot(weights, g.constant({spec.num_regions + 1}, mask));

    Tensor slots = concat(regions, sentinel);  // [k+1, region_width]
    Tensor context = matmul(weights, slots);   // [region_width]

    Tensor wc = binder.bind(params.at("out.context"), trainable);
    Tensor logits = linear(binder, params, "out.logits",
                           tanh(add(h, matmul(context, wc))), trainable);
    return DecoderStep{log_softmax(logits), alpha, h};
}

SequenceScore sequence_log_prob(Binder& binder, const DecoderSpec& spec,
                                ParamSet& params, const Tensor& regions,
                                const Tensor& global_feat,
                                const Annotation& tokens, bool trainable) {
    if (tokens.empty())
        throw std::invalid_argument("sequence_log_prob: empty token sequence");
    if (tokens.back() != kEndToken)
        throw std::invalid_argument("sequence_log_prob: sequence must end with token " +
                                    std::to_string(kEndToken));
    Graph& g = binder.graph();
    SequenceScore score;
    Tensor state = g.zeros({spec.state_width});
    int prev = start_token(spec);
    for (int tok : tokens) {
        if (tok < 0 || tok >= spec.vocab)
            throw std::out_of_range("sequence_log_prob: token " + std::to_string(tok) +
                                    " outside vocabulary");
        DecoderStep step =
            decoder_step(binder, spec, params, state, prev, regions, global_feat,
                         trainable);
        std::vector<double> onehot(static_cast<std::size_t>(spec.vocab), 0.0);
        onehot[static_cast<std::size_t>(tok)] = 1.0;
        score.log_probs.push_back(
            dot(step.log_probs, g.constant({spec.vocab}, onehot)));
        score.alphas.push_back(step.alpha);
        state = step.state;
        prev = tok;
    }
    return score;
}

namespace {

struct StepValues {
    std::vector<double> log_probs;
    std::vector<double> state;
};

// Forward-only decode step on a throwaway graph.
StepValues eval_step(const DecoderSpec& spec, ParamSet& params,
                     const std::vector<double>& regions,
                     const std::vector<double>& global_feat,
                     const std::vector<double>& state, int prev_token) {
    Graph g;
    Binder binder(g);
    Tensor r = g.constant({spec.num_regions, spec.region_width}, regions);
    Tensor vg = g.constant({spec.region_width}, global_feat);
    Tensor s = g.constant({spec.state_width}, state);
    DecoderStep step =
        decoder_step(binder, spec, params, s, prev_token, r, vg, /*trainable=*/false);
    return StepValues{step.log_probs.values(), step.state.values()};
}

}  // namespace

std::vector<BeamHypothesis> beam_search(const DecoderSpec& spec, ParamSet& params,
                                        const std::vector<double>& regions,
                                        const std::vector<double>& global_feat,
                                        int beam_size, int max_length) {
    if (beam_size < 1) throw std::invalid_argument("beam_search: beam size must be >= 1");
    if (max_length < 1) throw std::invalid_argument("beam_search: max length must be >= 1");

    struct Live {
        Annotation tokens;
        double log_prob;
        std::vector<double> state;
        int prev;
    };
    auto better_hyp = [](const BeamHypothesis& a, const BeamHypothesis& b) {
        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
        return a.tokens < b.tokens;  // lexicographic; lower token id wins
    };

    std::vector<Live> beam{Live{{},
                                0.0,
                                std::vector<double>(static_cast<std::size_t>(spec.state_width), 0.0),
                                start_token(spec)}};
    std::vector<BeamHypothesis> done;

    for (int t = 0; t < max_length && !beam.empty(); ++t) {
        struct Cand {
            double log_prob;
            int parent;
            int token;
        };
        std::vector<Cand> cands;
        std::vector<StepValues> steps(beam.size());
        for (std::size_t i = 0; i < beam.size(); ++i) {
            steps[i] = eval_step(spec, params, regions, global_feat, beam[i].state,
                                 beam[i].prev);
            for (int tok = 0; tok < spec.vocab; ++tok)
                cands.push_back(Cand{beam[i].log_prob +
                                         steps[i].log_probs[static_cast<std::size_t>(tok)],
                                     static_cast<int>(i), tok});
        }
        std::sort(cands.begin(), cands.end(), [&](const Cand& a, const Cand& b) {
            if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
            if (a.token != b.token) return a.token < b.token;
            return a.parent < b.parent;
        });
        if (cands.size() > static_cast<std::size_t>(beam_size))
            cands.resize(static_cast<std::size_t>(beam_size));

        std::vector<Live> next;
        for (const Cand& c : cands) {
            const Live& parent = beam[static_cast<std::size_t>(c.parent)];
            Annotation tokens = parent.tokens;
            tokens.push_back(c.token);
            if (c.token == kEndToken || t + 1 == max_length) {
                done.push_back(BeamHypothesis{std::move(tokens), c.log_prob});
            } else {
                next.push_back(Live{std::move(tokens), c.log_prob,
                                    steps[static_cast<std::size_t>(c.parent)].state,
                                    c.token});
            }
        }
        beam = std::move(next);
    }

    std::sort(done.begin(), done.end(), better_hyp);
    if (done.size() > static_cast<std::size_t>(beam_size))
        done.resize(static_cast<std::size_t>(beam_size));
    return done;
}

double sequence_total_log_prob(const DecoderSpec& spec, ParamSet& params,
                               const std::vector<double>& regions,
                               const std::vector<double>& global_feat,
                               const Annotation& tokens) {
    Graph g;
    Binder binder(g);
    Tensor r = g.constant({spec.num_regions, spec.region_width}, regions);
    Tensor vg = g.constant({spec.region_width}, global_feat);
    SequenceScore score =
        sequence_log_prob(binder, spec, params, r, vg, tokens, /*trainable=*/false);
    double total = 0.0;
    for (const Tensor& lp : score.log_probs) total += lp.scalar();
    return total;
}

}  // namespace nt
