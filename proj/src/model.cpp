/*
 * Copyright 2026 The srwm-acl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "srwm/model.hpp"

#include <cmath>
#include <random>
#include <set>

namespace srwm {

void ModelConfig::validate() const {
    if (n_layers == 0) throw ConfigError("model.n_layers must be positive");
    if (d_model == 0 || n_heads == 0) throw ConfigError("model.d_model and model.n_heads must be positive");
    if (d_model % n_heads != 0)
        throw ConfigError("model.d_model (" + std::to_string(d_model) + ") is not divisible by model.n_heads (" +
                          std::to_string(n_heads) + ")");
    if (ff_multiplier == 0) throw ConfigError("model.ff_multiplier must be positive");
    if (n_outputs == 0) throw ConfigError("model.n_outputs must be positive");
    if (input_dim == 0) throw ConfigError("model.input_dim must be positive");
    if (encoder == EncoderKind::Mlp && (mlp_hidden == 0 || mlp_features == 0))
        throw ConfigError("model.mlp_hidden and model.mlp_features must be positive");
    if (encoder == EncoderKind::Identity && input_dim < 2)
        throw ConfigError("identity encoder needs input_dim >= 2 for standardization");
    if (!(norm_eps > 0)) throw ConfigError("model.norm_eps must be positive");
}

nlohmann::json to_json(const ModelConfig& cfg) {
    return nlohmann::json{
        {"n_layers", cfg.n_layers},
        {"d_model", cfg.d_model},
        {"n_heads", cfg.n_heads},
        {"ff_multiplier", cfg.ff_multiplier},
        {"n_outputs", cfg.n_outputs},
        {"input_dim", cfg.input_dim},
        {"encoder", cfg.encoder == EncoderKind::Mlp ? "mlp" : "identity"},
        {"mlp_hidden", cfg.mlp_hidden},
        {"mlp_features", cfg.mlp_features},
        {"norm_eps", cfg.norm_eps},
        {"seed", cfg.seed},
        {"precision", kRealName},
    };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    static const std::set<std::string> known{"n_layers",   "d_model",      "n_heads",  "ff_multiplier",
                                             "n_outputs",  "input_dim",    "encoder",  "mlp_hidden",
                                             "mlp_features", "norm_eps",   "seed",     "precision"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw ConfigError("unknown key model." + key);
    ModelConfig c;
    try {
        c.n_layers = j.value("n_layers", c.n_layers);
        c.d_model = j.value("d_model", c.d_model);
        c.n_heads = j.value("n_heads", c.n_heads);
        c.ff_multiplier = j.value("ff_multiplier", c.ff_multiplier);
        c.n_outputs = j.value("n_outputs", c.n_outputs);
        c.input_dim = j.value("input_dim", c.input_dim);
        c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
        c.mlp_features = j.value("mlp_features", c.mlp_features);
        c.norm_eps = j.value("norm_eps", c.norm_eps);
        c.seed = j.value("seed", c.seed);
        const std::string enc = j.value("encoder", std::string("identity"));
        if (enc == "identity") c.encoder = EncoderKind::Identity;
        else if (enc == "mlp") c.encoder = EncoderKind::Mlp;
        else throw ConfigError("model.encoder must be \"identity\" or \"mlp\", got \"" + enc + "\"");
        if (j.contains("precision") && j.at("precision").get<std::string>() != kRealName)
            throw ConfigError("model.precision " + j.at("precision").get<std::string>() +
                              " does not match this build (" + kRealName + ")");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    return c;
}

namespace {

Linear make_linear(std::size_t out, std::size_t in, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    Tensor w(Shape{out, in});
    for (Real& v : w.mutable_data()) v = static_cast<Real>(normal(rng));
    w.set_requires_grad(true);
    return Linear{std::move(w), Tensor(Shape{out}).set_requires_grad(true)};
}

Norm make_norm(std::size_t n) {
    return Norm{Tensor(Shape{n}, Real(1)).set_requires_grad(true), Tensor(Shape{n}).set_requires_grad(true)};
}

Linear clone_linear(const Linear& l) {
    return Linear{l.weight.clone(), l.bias.clone()};
}

Norm clone_norm(const Norm& n) { return Norm{n.gain.clone(), n.bias.clone()}; }

Var apply_linear(Tape& tape, const Linear& l, const Var& x) {
    return tape.add(tape.matmul(tape.param(l.weight), x), tape.param(l.bias));
}

Var apply_norm(Tape& tape, const Norm& n, const Var& x, Real eps) {
    return tape.add(tape.mul(tape.standardize(x, eps), tape.param(n.gain)), tape.param(n.bias));
}

}  // namespace

ModelParams init_model(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    std::mt19937_64 rng(cfg.seed);
    if (cfg.encoder == EncoderKind::Mlp) {
        p.enc_hidden = make_linear(cfg.mlp_hidden, cfg.input_dim, rng);
        p.enc_out = make_linear(cfg.mlp_features, cfg.mlp_hidden, rng);
    }
    p.proj = make_linear(cfg.d_model, cfg.feature_dim() + cfg.label_slots(), rng);
    const std::size_t dh = cfg.d_head();
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        Block b;
        b.pre_srwm = make_norm(cfg.d_model);
        b.srwm = srwm_init(dh, dh, cfg.n_heads, rng());
        b.pre_ff = make_norm(cfg.d_model);
        b.ff_in = make_linear(cfg.ff_multiplier * cfg.d_model, cfg.d_model, rng);
        b.ff_out = make_linear(cfg.d_model, cfg.ff_multiplier * cfg.d_model, rng);
        p.blocks.push_back(std::move(b));
    }
    p.final_norm = make_norm(cfg.d_model);
    p.head = make_linear(cfg.n_outputs, cfg.d_model, rng);
    return p;
}

ModelParams clone_params(const ModelParams& src) {
    ModelParams p;
    p.config = src.config;
    if (src.enc_hidden) p.enc_hidden = clone_linear(*src.enc_hidden);
    if (src.enc_out) p.enc_out = clone_linear(*src.enc_out);
    p.proj = clone_linear(src.proj);
    for (const Block& b : src.blocks) {
        Block c;
        c.pre_srwm = clone_norm(b.pre_srwm);
        c.srwm.dims = b.srwm.dims;
        for (const Tensor& h : b.srwm.heads) c.srwm.heads.push_back(h.clone());
        c.pre_ff = clone_norm(b.pre_ff);
        c.ff_in = clone_linear(b.ff_in);
        c.ff_out = clone_linear(b.ff_out);
        p.blocks.push_back(std::move(c));
    }
    p.final_norm = clone_norm(src.final_norm);
    p.head = clone_linear(src.head);
    return p;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto lin = [&](const std::string& name, Linear& l) {
        out.emplace_back(name + ".weight", &l.weight);
        out.emplace_back(name + ".bias", &l.bias);
    };
    auto norm = [&](const std::string& name, Norm& n) {
        out.emplace_back(name + ".gain", &n.gain);
        out.emplace_back(name + ".bias", &n.bias);
    };
    if (enc_hidden) lin("encoder.hidden", *enc_hidden);
    if (enc_out) lin("encoder.out", *enc_out);
    lin("proj", proj);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        const std::string pre = "blocks." + std::to_string(l);
        norm(pre + ".pre_srwm", blocks[l].pre_srwm);
        for (std::size_t h = 0; h < blocks[l].srwm.heads.size(); ++h)
            out.emplace_back(pre + ".srwm.w0." + std::to_string(h), &blocks[l].srwm.heads[h]);
        norm(pre + ".pre_ff", blocks[l].pre_ff);
        lin(pre + ".ff_in", blocks[l].ff_in);
        lin(pre + ".ff_out", blocks[l].ff_out);
    }
    norm("final_norm", final_norm);
    lin("head", head);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
    auto mut = const_cast<ModelParams*>(this)->named();
    return {mut.begin(), mut.end()};
}

ModelState start_state(Tape& tape, const ModelParams& params) {
    ModelState s;
    s.layers.reserve(params.blocks.size());
    for (const Block& b : params.blocks) s.layers.push_back(srwm_start(tape, b.srwm));
    return s;
}

Var encode_input(Tape& tape, const ModelParams& params, const LabeledInput& in) {
    const ModelConfig& cfg = params.config;
    if (in.x.size() != cfg.input_dim)
        throw DimensionError("input has " + std::to_string(in.x.size()) + " features, model expects " +
                             std::to_string(cfg.input_dim));
    if (in.label && *in.label >= cfg.n_outputs)
        throw IndexError("label " + std::to_string(*in.label) + " outside the " + std::to_string(cfg.n_outputs) +
                         "-way label space");
    Var x = tape.constant(Tensor(Shape{cfg.input_dim}, std::vector<Real>(in.x.begin(), in.x.end())));
    Var feature = x;
    if (cfg.encoder == EncoderKind::Mlp) {
        feature = apply_linear(tape, *params.enc_out, tape.relu(apply_linear(tape, *params.enc_hidden, x)));
    }
    feature = tape.standardize(feature, cfg.norm_eps);
    Tensor onehot(Shape{cfg.label_slots()});
    onehot.mutable_data()[in.label ? *in.label : cfg.n_outputs] = Real(1);
    return apply_linear(tape, params.proj, tape.concat({feature, tape.constant(std::move(onehot))}));
}

Var model_step(Tape& tape, const ModelParams& params, ModelState& state, const LabeledInput& in) {
    const ModelConfig& cfg = params.config;
    if (state.layers.size() != params.blocks.size()) throw DimensionError("model state layer count mismatch");
    Var h = encode_input(tape, params, in);
    for (std::size_t l = 0; l < params.blocks.size(); ++l) {
        const Block& b = params.blocks[l];
        Var a = srwm_layer_step(tape, state.layers[l], apply_norm(tape, b.pre_srwm, h, cfg.norm_eps), b.srwm.dims);
        h = tape.add(h, a);
        Var f = apply_norm(tape, b.pre_ff, h, cfg.norm_eps);
        f = apply_linear(tape, b.ff_out, tape.relu(apply_linear(tape, b.ff_in, f)));
        h = tape.add(h, f);
    }
    return apply_linear(tape, params.head, apply_norm(tape, params.final_norm, h, cfg.norm_eps));
}

ForwardResult model_forward(Tape& tape, const ModelParams& params, ModelState state,
                            std::span<const LabeledInput> inputs) {
    ForwardResult r;
    r.logits.reserve(inputs.size());
    for (const LabeledInput& in : inputs) r.logits.push_back(model_step(tape, params, state, in));
    r.state = std::move(state);
    return r;
}

ForwardResult model_forward(Tape& tape, const ModelParams& params, std::span<const LabeledInput> inputs) {
    return model_forward(tape, params, start_state(tape, params), inputs);
}

Var query_logits(Tape& tape, const ModelParams& params, const ModelState& state, std::span<const Real> x) {
    ModelState copy = state;
    return model_step(tape, params, copy, LabeledInput{x, std::nullopt});
}

std::vector<Real> predict(Tape& tape, const ModelParams& params, const ModelState& state, std::span<const Real> x) {
    Var p = tape.softmax(query_logits(tape, params, state, x));
    auto d = p.value().data();
    return {d.begin(), d.end()};
}

}  // namespace srwm
