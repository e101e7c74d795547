#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "easr/checkpoint.hpp"
#include "easr/corpus.hpp"
#include "easr/ctc.hpp"
#include "easr/inventory.hpp"
#include "easr/rng.hpp"
#include "easr/tape.hpp"

namespace easr {

enum class AttentionKind { kContent, kLocation, kWindowed };

inline std::string to_string(AttentionKind k) {
  switch (k) {
    case AttentionKind::kContent: return "content";
    case AttentionKind::kLocation: return "location";
    case AttentionKind::kWindowed: return "windowed";
  }
  return "content";
}

inline AttentionKind attention_kind_from_string(const std::string& s) {
  if (s == "content" || s == "vanilla") return AttentionKind::kContent;
  if (s == "location" || s == "location-aware") return AttentionKind::kLocation;
  if (s == "windowed") return AttentionKind::kWindowed;
  throw std::invalid_argument("unknown attention kind '" + s +
                              "' (expected content|location|windowed)");
}

// Pyramidal bidirectional encoder. `subsample_before` lists 1-based layers
// whose input is pair-concatenated along time (odd tails repeat the last
// frame). The default {3, 4} halves between layers 2-3 and 3-4, for a 4x
// reduction and output length ceil(ceil(T/2)/2); output dim is always
// 2 * units.
struct EncoderConfig {
  int layers = 4;
  int units = 320;  // per direction
  std::vector<int> subsample_before = {3, 4};
  int input_dim = 40;
  double noise_std = 0.01;
  double dropout = 0.5;

  static std::vector<int> default_subsample(int layers) {
    if (layers >= 4) return {3, 4};
    if (layers == 3) return {2, 3};
    if (layers == 2) return {1, 2};
    return {1};
  }

  int output_dim() const { return 2 * units; }

  std::size_t output_length(std::size_t T) const {
    std::size_t t = T;
    for (int i = 0; i < static_cast<int>(subsample_before.size()); ++i) {
      t = (t + 1) / 2;
    }
    return t;
  }
};

struct DecoderConfig {
  int layers = 2;
  int units = 300;
  AttentionKind attention = AttentionKind::kContent;
  double sampling_prob = 0.1;
  int embed_dim = 64;
  int att_dim = 128;
  int conv_filters = 4;   // location-aware variant
  int conv_width = 7;
  int window = 5;         // windowed variant: +-window frames around the peak
};

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  int vocab = 0;  // inventory size; CTC adds a trailing blank class

  void to_meta(MetaBlock& mb) const {
    mb.set_int("enc_layers", encoder.layers);
    mb.set_int("enc_units", encoder.units);
    std::ostringstream ss;
    for (std::size_t i = 0; i < encoder.subsample_before.size(); ++i) {
      if (i) ss << ",";
      ss << encoder.subsample_before[i];
    }
    mb.set("enc_subsample", ss.str());
    mb.set_int("enc_input_dim", encoder.input_dim);
    mb.set_double("noise_std", encoder.noise_std);
    mb.set_double("dropout", encoder.dropout);
    mb.set_int("dec_layers", decoder.layers);
    mb.set_int("dec_units", decoder.units);
    mb.set("attention", easr::to_string(decoder.attention));
    mb.set_double("sampling_prob", decoder.sampling_prob);
    mb.set_int("embed_dim", decoder.embed_dim);
    mb.set_int("att_dim", decoder.att_dim);
    mb.set_int("conv_filters", decoder.conv_filters);
    mb.set_int("conv_width", decoder.conv_width);
    mb.set_int("window", decoder.window);
    mb.set_int("vocab", vocab);
    mb.set_int("blank_index", vocab);
  }

  static ModelConfig from_meta(const MetaBlock& mb) {
    ModelConfig cfg;
    cfg.encoder.layers = static_cast<int>(mb.get_int("enc_layers"));
    cfg.encoder.units = static_cast<int>(mb.get_int("enc_units"));
    cfg.encoder.subsample_before.clear();
    std::istringstream ss(mb.get("enc_subsample"));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) cfg.encoder.subsample_before.push_back(std::stoi(tok));
    }
    cfg.encoder.input_dim = static_cast<int>(mb.get_int("enc_input_dim"));
    cfg.encoder.noise_std = mb.get_double("noise_std");
    cfg.encoder.dropout = mb.get_double("dropout");
    cfg.decoder.layers = static_cast<int>(mb.get_int("dec_layers"));
    cfg.decoder.units = static_cast<int>(mb.get_int("dec_units"));
    cfg.decoder.attention = attention_kind_from_string(mb.get("attention"));
    cfg.decoder.sampling_prob = mb.get_double("sampling_prob");
    cfg.decoder.embed_dim = static_cast<int>(mb.get_int("embed_dim"));
    cfg.decoder.att_dim = static_cast<int>(mb.get_int("att_dim"));
    cfg.decoder.conv_filters = static_cast<int>(mb.get_int("conv_filters"));
    cfg.decoder.conv_width = static_cast<int>(mb.get_int("conv_width"));
    cfg.decoder.window = static_cast<int>(mb.get_int("window"));
    cfg.vocab = static_cast<int>(mb.get_int("vocab"));
    return cfg;
  }
};

// Shared-encoder model with two heads: an affine CTC projection over the
// encoder states and an attention decoder. The decoder consumes <sos> + y
// and is trained to produce y + <eos>; at each step the attention context is
// fed both to the LSTM input (previous context) and to the output layer
// (current context).
class MtlModel {
 public:
  MtlModel(ModelConfig cfg, const GraphemeInventory& inventory, Rng init_rng)
      : cfg_(validate(std::move(cfg), inventory)), inventory_(inventory) {
    create_params(&init_rng);
  }

  MtlModel(ModelConfig cfg, const GraphemeInventory& inventory,
           ParameterSet checkpoint)
      : cfg_(validate(std::move(cfg), inventory)), inventory_(inventory) {
    create_params(nullptr);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (checkpoint.size() != params_.size() ||
          checkpoint[i].name != params_[i].name) {
        throw IoError("checkpoint does not match model configuration");
      }
      require_same_shape(checkpoint[i].value, params_[i].value, "load model");
      params_[i].value = checkpoint[i].value;
    }
  }

  const ModelConfig& config() const { return cfg_; }
  const GraphemeInventory& inventory() const { return inventory_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // ---------------------------------------------------------------------
  // Encoder
  // ---------------------------------------------------------------------

  // Features (T x D) -> encoder states (T' x 2*units). Gaussian input noise
  // and output dropout are active only in training mode.
  Var encode(Tape& tape, const Tensor& features, bool training,
             Rng* rng = nullptr) const {
    if (features.rank() != 2 || features.rows() < 1) {
      throw ShapeError("encode: features must be T x D with T >= 1, got " +
                       features.shape_str());
    }
    if (static_cast<int>(features.cols()) != cfg_.encoder.input_dim) {
      throw ShapeError("encode: feature dim " +
                       std::to_string(features.cols()) + " != configured " +
                       std::to_string(cfg_.encoder.input_dim));
    }
    Tensor inputs = features;
    if (training && cfg_.encoder.noise_std > 0.0) {
      if (rng == nullptr) {
        throw std::invalid_argument("encode: training mode needs an rng");
      }
      inputs = gaussian_noise(inputs, cfg_.encoder.noise_std, *rng);
    }
    Var h = tape.input(std::move(inputs));
    for (int layer = 1; layer <= cfg_.encoder.layers; ++layer) {
      if (contains(cfg_.encoder.subsample_before, layer)) {
        h = pair_concat_time(tape, h);
      }
      h = blstm_layer(tape, h, layer);
    }
    if (training && cfg_.encoder.dropout > 0.0) {
      if (rng == nullptr) {
        throw std::invalid_argument("encode: training mode needs an rng");
      }
      h = dropout(h, cfg_.encoder.dropout, *rng, true);
    }
    return h;
  }

  // ---------------------------------------------------------------------
  // CTC head
  // ---------------------------------------------------------------------

  // Encoder states -> T' x (vocab+1) log-posteriors, blank last.
  Var ctc_log_posteriors(Tape& tape, const Var& enc) const {
    const Parameter& w = at("ctc_head.w");
    const Parameter& b = at("ctc_head.b");
    return log_softmax(add_rowvec(
        matmul(enc, tape.param(const_cast<Parameter&>(w))),
        tape.param(const_cast<Parameter&>(b))));
  }

  Var ctc_head_loss(Tape& tape, const Var& enc,
                    std::span<const int> target) const {
    Var posteriors = ctc_log_posteriors(tape, enc);
    return ctc_loss_op(posteriors, target, inventory_.blank());
  }

  // ---------------------------------------------------------------------
  // Attention decoder
  // ---------------------------------------------------------------------

  struct DecoderState {
    std::vector<LstmState> layers;
    Var context;      // 1 x 2u, previous attention context
    Var att_weights;  // 1 x T', previous alignment
    int att_center = -1;  // windowed variant; -1 = no mask on the first step
  };

  // Per-utterance cached projections of the encoder states.
  struct EncoderProjection {
    Var enc;       // T' x 2u
    Var att_proj;  // T' x att_dim
  };

  EncoderProjection project_encoder(Tape& tape, const Var& enc) const {
    const Parameter& u = at("att.u");
    return EncoderProjection{
        enc, matmul(enc, tape.param(const_cast<Parameter&>(u)))};
  }

  DecoderState initial_state(Tape& tape, const Var& enc) const {
    const std::size_t frames = enc.value().rows();
    DecoderState st;
    for (int l = 0; l < cfg_.decoder.layers; ++l) {
      Var h = tape.input(Tensor::zeros(1, cfg_.decoder.units));
      Var c = tape.input(Tensor::zeros(1, cfg_.decoder.units));
      st.layers.push_back(LstmState{h, c});
    }
    st.context = tape.input(Tensor::zeros(1, cfg_.encoder.output_dim()));
    st.att_weights = tape.input(
        Tensor::full(1, frames, 1.0 / static_cast<double>(frames)));
    st.att_center = -1;
    return st;
  }

  // One decoder step: consume `token`, update `state`, return 1 x vocab
  // log-probabilities for the next symbol.
  Var decoder_step(Tape& tape, const EncoderProjection& ep, DecoderState& state,
                   int token) const {
    if (ep.enc.value().rows() < 1) {
      throw ShapeError("decoder_step: empty encoder sequence");
    }
    Var emb = row(param_var(tape, "dec.embed"), static_cast<std::size_t>(token));
    Var x = concat({emb, state.context}, 1);
    for (int l = 0; l < cfg_.decoder.layers; ++l) {
      const std::string base = "dec.l" + std::to_string(l);
      state.layers[static_cast<std::size_t>(l)] = lstm_cell(
          x, state.layers[static_cast<std::size_t>(l)],
          param_var(tape, base + ".wx"), param_var(tape, base + ".wh"),
          param_var(tape, base + ".b"));
      x = state.layers[static_cast<std::size_t>(l)].h;
    }
    const Var& s = x;  // top decoder state, 1 x units

    attend(tape, ep, s, state);
    Var out_in = concat({s, state.context}, 1);
    Var logits = add_rowvec(matmul(out_in, param_var(tape, "out.w")),
                            param_var(tape, "out.b"));
    return log_softmax(logits);
  }

  // Eq.-style attention loss: -sum_t log P(y_t | x, y_{1:t-1}), over the
  // target followed by <eos>. With probability sampling_prob (training only)
  // the previous ground-truth input token is replaced by a token sampled
  // from the model's previous predictive distribution.
  Var attention_loss(Tape& tape, const Var& enc, std::span<const int> target,
                     bool training, Rng* rng = nullptr) const {
    if (target.empty()) {
      throw std::invalid_argument("attention_loss: empty target");
    }
    const bool sample = training && cfg_.decoder.sampling_prob > 0.0;
    if (sample && rng == nullptr) {
      throw std::invalid_argument("attention_loss: sampling needs an rng");
    }
    EncoderProjection ep = project_encoder(tape, enc);
    DecoderState state = initial_state(tape, enc);
    const std::size_t steps = target.size() + 1;  // targets then <eos>
    std::optional<Var> loss;
    int sampled_prev = -1;
    for (std::size_t t = 0; t < steps; ++t) {
      int token;
      if (t == 0) {
        token = inventory_.sos();
      } else if (sample && rng->uniform() < cfg_.decoder.sampling_prob) {
        token = sampled_prev;
      } else {
        token = target[t - 1];
      }
      Var logp = decoder_step(tape, ep, state, token);
      const int want =
          t < target.size() ? target[t] : inventory_.eos();
      Var step_loss = scale(pick(logp, 0, static_cast<std::size_t>(want)), -1.0);
      loss = loss ? add(*loss, step_loss) : step_loss;
      if (sample) sampled_prev = sample_symbol(logp.value(), *rng);
    }
    return *loss;
  }

 private:
  static ModelConfig validate(ModelConfig cfg,
                              const GraphemeInventory& inventory) {
    if (cfg.vocab == 0) cfg.vocab = inventory.size();
    if (cfg.vocab != inventory.size()) {
      throw std::invalid_argument("model vocab " + std::to_string(cfg.vocab) +
                                  " != inventory size " +
                                  std::to_string(inventory.size()));
    }
    if (cfg.encoder.layers < 1 || cfg.decoder.layers < 1) {
      throw std::invalid_argument("encoder/decoder need at least one layer");
    }
    for (int s : cfg.encoder.subsample_before) {
      if (s < 1 || s > cfg.encoder.layers) {
        throw std::invalid_argument("subsample layer " + std::to_string(s) +
                                    " outside 1.." +
                                    std::to_string(cfg.encoder.layers));
      }
    }
    if (cfg.decoder.sampling_prob < 0.0 || cfg.decoder.sampling_prob > 1.0) {
      throw std::invalid_argument("sampling_prob must be in [0,1]");
    }
    return cfg;
  }

  static bool contains(const std::vector<int>& v, int x) {
    return std::find(v.begin(), v.end(), x) != v.end();
  }

  void create_params(Rng* init) {
    auto make = [&](const std::string& name, std::size_t r, std::size_t c) {
      if (init != nullptr) {
        Rng stream = init->split(name);
        params_.create(name, {r, c}, stream);
      } else {
        params_.adopt(name, Tensor({r, c}));
      }
    };
    const int u = cfg_.encoder.units;
    int dim = cfg_.encoder.input_dim;
    for (int layer = 1; layer <= cfg_.encoder.layers; ++layer) {
      if (contains(cfg_.encoder.subsample_before, layer)) dim *= 2;
      for (const char* dir : {"fwd", "bwd"}) {
        const std::string base =
            "enc.l" + std::to_string(layer) + "." + dir;
        make(base + ".wx", static_cast<std::size_t>(dim),
             static_cast<std::size_t>(4 * u));
        make(base + ".wh", static_cast<std::size_t>(u),
             static_cast<std::size_t>(4 * u));
        make(base + ".b", 1, static_cast<std::size_t>(4 * u));
      }
      dim = 2 * u;
    }
    const int enc_out = cfg_.encoder.output_dim();
    const int v = cfg_.vocab;
    make("ctc_head.w", static_cast<std::size_t>(enc_out),
         static_cast<std::size_t>(v + 1));
    make("ctc_head.b", 1, static_cast<std::size_t>(v + 1));

    make("dec.embed", static_cast<std::size_t>(v),
         static_cast<std::size_t>(cfg_.decoder.embed_dim));
    int in = cfg_.decoder.embed_dim + enc_out;
    for (int l = 0; l < cfg_.decoder.layers; ++l) {
      const std::string base = "dec.l" + std::to_string(l);
      make(base + ".wx", static_cast<std::size_t>(in),
           static_cast<std::size_t>(4 * cfg_.decoder.units));
      make(base + ".wh", static_cast<std::size_t>(cfg_.decoder.units),
           static_cast<std::size_t>(4 * cfg_.decoder.units));
      make(base + ".b", 1, static_cast<std::size_t>(4 * cfg_.decoder.units));
      in = cfg_.decoder.units;
    }
    const int a = cfg_.decoder.att_dim;
    make("att.w", static_cast<std::size_t>(cfg_.decoder.units),
         static_cast<std::size_t>(a));
    make("att.u", static_cast<std::size_t>(enc_out),
         static_cast<std::size_t>(a));
    make("att.b", 1, static_cast<std::size_t>(a));
    make("att.v", static_cast<std::size_t>(a), 1);
    if (cfg_.decoder.attention == AttentionKind::kLocation) {
      make("att.conv", static_cast<std::size_t>(cfg_.decoder.conv_filters),
           static_cast<std::size_t>(cfg_.decoder.conv_width));
      make("att.conv_proj", static_cast<std::size_t>(cfg_.decoder.conv_filters),
           static_cast<std::size_t>(a));
    }
    make("out.w", static_cast<std::size_t>(cfg_.decoder.units + enc_out),
         static_cast<std::size_t>(v));
    make("out.b", 1, static_cast<std::size_t>(v));
  }

  const Parameter& at(const std::string& name) const {
    Parameter* p = const_cast<ParameterSet&>(params_).find(name);
    if (p == nullptr) throw std::runtime_error("missing parameter " + name);
    return *p;
  }

  Var param_var(Tape& tape, const std::string& name) const {
    return tape.param(const_cast<Parameter&>(at(name)));
  }

  // Concatenate adjacent frame pairs, repeating the last frame of odd-length
  // sequences: (T x d) -> (ceil(T/2) x 2d).
  static Var pair_concat_time(Tape& tape, const Var& h) {
    const std::size_t T = h.value().rows();
    std::vector<Var> rows_out;
    rows_out.reserve((T + 1) / 2);
    for (std::size_t t = 0; t < T; t += 2) {
      Var a = row(h, t);
      Var b = t + 1 < T ? row(h, t + 1) : row(h, t);
      rows_out.push_back(concat({a, b}, 1));
    }
    return rows_out.size() == 1 ? rows_out[0] : concat(rows_out, 0);
  }

  // One bidirectional layer: forward and backward unidirectional passes,
  // concatenated per frame.
  Var blstm_layer(Tape& tape, const Var& x, int layer) const {
    Var fwd = lstm_direction(tape, x, layer, /*backward=*/false);
    Var bwd = lstm_direction(tape, x, layer, /*backward=*/true);
    return concat({fwd, bwd}, 1);
  }

  Var lstm_direction(Tape& tape, const Var& x, int layer, bool backward) const {
    const std::string base = "enc.l" + std::to_string(layer) + "." +
                             (backward ? "bwd" : "fwd");
    Var wx = param_var(tape, base + ".wx");
    Var wh = param_var(tape, base + ".wh");
    Var b = param_var(tape, base + ".b");
    const std::size_t T = x.value().rows();
    Var xw_all = matmul(x, wx);  // T x 4u, batched input projection
    LstmState st{tape.input(Tensor::zeros(1, cfg_.encoder.units)),
                 tape.input(Tensor::zeros(1, cfg_.encoder.units))};
    std::vector<Var> outputs(T, Var{});
    for (std::size_t i = 0; i < T; ++i) {
      const std::size_t t = backward ? T - 1 - i : i;
      st = lstm_cell_from_xw(row(xw_all, t), st, wh, b);
      outputs[t] = st.h;
    }
    return outputs.size() == 1 ? outputs[0] : concat(outputs, 0);
  }

  // Computes attention weights and context for the current decoder state,
  // updating `state` in place.
  void attend(Tape& tape, const EncoderProjection& ep, const Var& s,
              DecoderState& state) const {
    const std::size_t frames = ep.enc.value().rows();
    Var pre = ep.att_proj;
    if (cfg_.decoder.attention == AttentionKind::kLocation) {
      Var conv = conv1d_row(state.att_weights, param_var(tape, "att.conv"));
      pre = add(pre, matmul(conv, param_var(tape, "att.conv_proj")));
    }
    Var query = add(matmul(s, param_var(tape, "att.w")),
                    param_var(tape, "att.b"));
    Var scores = transpose(
        matmul(tanh(add_rowvec(pre, query)), param_var(tape, "att.v")));

    Var weights{};
    if (cfg_.decoder.attention == AttentionKind::kWindowed &&
        state.att_center >= 0) {
      const int w = cfg_.decoder.window;
      const int lo = std::max(0, state.att_center - w);
      const int hi = std::min(static_cast<int>(frames) - 1,
                              state.att_center + w);
      const auto len = static_cast<std::size_t>(hi - lo + 1);
      Var win = slice(scores, 1, static_cast<std::size_t>(lo), len);
      weights = scatter_row(softmax(win), frames, static_cast<std::size_t>(lo));
    } else {
      weights = softmax(scores);
    }

    if (cfg_.decoder.attention == AttentionKind::kWindowed) {
      const Tensor& wv = weights.value();
      int peak = 0;
      for (std::size_t j = 1; j < wv.cols(); ++j) {
        if (wv.at(0, j) > wv.at(0, static_cast<std::size_t>(peak))) {
          peak = static_cast<int>(j);
        }
      }
      state.att_center = peak;
    }
    state.att_weights = weights;
    state.context = matmul(weights, ep.enc);
  }

  static int sample_symbol(const Tensor& logp, Rng& rng) {
    const double x = rng.uniform();
    double acc = 0.0;
    for (std::size_t j = 0; j < logp.cols(); ++j) {
      acc += std::exp(logp.at(0, j));
      if (x < acc) return static_cast<int>(j);
    }
    return static_cast<int>(logp.cols()) - 1;
  }

  ModelConfig cfg_;
  GraphemeInventory inventory_;
  ParameterSet params_;
};

// ---------------------------------------------------------------------------
// Model persistence: EAM1 checkpoint plus a UTF-8 key-value sidecar
// ("<path>.meta") holding the hyperparameters and the inventory.
// ---------------------------------------------------------------------------

inline void save_model(const std::string& path, const MtlModel& model) {
  save_checkpoint(path, model.params());
  MetaBlock mb;
  model.config().to_meta(mb);
  mb.set("inventory", model.inventory().serialize());
  mb.save(path + ".meta");
}

inline MtlModel load_model(const std::string& path) {
  MetaBlock mb = MetaBlock::load(path + ".meta");
  ModelConfig cfg = ModelConfig::from_meta(mb);
  GraphemeInventory inv = GraphemeInventory::deserialize(mb.get("inventory"));
  return MtlModel(cfg, inv, load_checkpoint(path));
}

}  // namespace easr
