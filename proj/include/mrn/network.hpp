#ifndef MRN_NETWORK_HPP
#define MRN_NETWORK_HPP

#include <optional>

#include "mrn/blocks.hpp"

namespace mrn {

struct MrnConfig {
  int depth = 4;          // number of encoder stages
  int base_channels = 16; // channels at stage 1, doubling per stage
  int in_channels = 3;
  int descriptors = 64;   // DSPA bank size N
  bool msc = true;        // cascade MSC in encoder stages, bottleneck, OEP stages

  void validate() const {
    check(depth >= 1, "MrnConfig: depth must be >= 1");
    check(base_channels >= 1, "MrnConfig: base_channels must be >= 1");
    check(in_channels >= 1, "MrnConfig: in_channels must be >= 1");
    check(descriptors >= 1, "MrnConfig: descriptors must be >= 1");
  }
  // stage i feature channels, i = 1..depth
  int stage_channels(int i) const { return base_channels << (i - 1); }
  int bottleneck_channels() const { return base_channels << depth; }
  void validate_input(int c, int h, int w) const {
    check(c == in_channels, "input has " + std::to_string(c) + " channels, config expects " +
                                std::to_string(in_channels));
    int div = 1 << depth;
    check(h % div == 0 && w % div == 0,
          "input " + std::to_string(h) + "x" + std::to_string(w) +
              " not divisible by 2^depth = " + std::to_string(div));
  }
};

template <typename T>
struct DualOutput {
  ArrayPtr<T> aux_map;   // AEP head, full resolution, values in [0,1]
  ArrayPtr<T> main_map;  // OEP head, full resolution, values in [0,1]
};

// Two stacked 3x3 conv + BN + relu, optionally followed by a cascade MSC.
// Used for every encoder stage and for the bottleneck.
template <typename T>
struct DoubleConv {
  Conv2d<T> conv1, conv2;
  BatchNorm<T> bn1, bn2;
  std::optional<CascadeMsc<T>> msc;

  DoubleConv() = default;
  DoubleConv(ParamStore<T>& store, const std::string& prefix, int in_ch, int out_ch, bool with_msc,
             std::mt19937_64& rng)
      : conv1(store, prefix + ".conv1", in_ch, out_ch, 3, rng),
        conv2(store, prefix + ".conv2", out_ch, out_ch, 3, rng),
        bn1(store, prefix + ".bn1", out_ch),
        bn2(store, prefix + ".bn2", out_ch) {
    if (with_msc) msc.emplace(store, prefix + ".msc", out_ch, out_ch, rng);
  }

  ArrayPtr<T> forward(const ArrayPtr<T>& x, Tape<T>* tape, bool training) {
    auto y = relu(bn1.forward(conv1.forward(x, tape), tape, training), tape);
    y = relu(bn2.forward(conv2.forward(y, tape), tape, training), tape);
    if (msc) y = msc->forward(y, tape);
    return y;
  }
};

template <typename T>
struct EncodeResult {
  std::vector<ArrayPtr<T>> skips;   // S_i: pre-pool activation of stage i, i = 1..d
  std::vector<ArrayPtr<T>> pooled;  // F_i: max-pooled stage output, i = 1..d
  ArrayPtr<T> bottom;               // bottleneck output at level d
};

template <typename T>
struct AepResult {
  std::vector<ArrayPtr<T>> features;  // Fu^a_j: raw transconv outputs, j = 1..d
  std::vector<ArrayPtr<T>> states;    // A_j: DSPA-refined decoder state, j = 1..d
  ArrayPtr<T> aux_map;
};

// Melanoma Recognition Network: shared contracting encoder, auxiliary
// expansive path (AEP) with per-stage DSPA, original expansive path (OEP)
// fusing AEP features, and a sigmoid 1x1 head on each path.
//
// Channel bookkeeping: stage i runs at spatial level i-1 (level L means
// H/2^L) and has nominal channel count base*2^(i-1). AEP step j concatenates
// the previous state with the same-level encoder feature, restores the
// level's nominal count with a 1x1 convolution, and upsamples with a 2x2
// stride-2 transposed convolution that halves the channel count; the state
// after step j is the DSPA output over Concat(Fu^a_j, S), where S is the
// encoder pre-pool skip at the same resolution, so it carries twice the
// nominal count of its level. OEP step j upsamples first and then fuses the
// result with the step's AEP state and the same-resolution pre-pool skip
// through a 1x1 reduction (plus MSC); consuming A_j rather than A_{j-1}
// keeps all d attention-refined states on the main path.
template <typename T>
class Mrn {
 public:
  explicit Mrn(const MrnConfig& cfg, uint64_t init_seed = 1) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(init_seed);
    const int d = cfg_.depth;
    int in_ch = cfg_.in_channels;
    for (int i = 1; i <= d; ++i) {
      stages_.emplace_back(params_, "encoder.stage" + std::to_string(i), in_ch,
                           cfg_.stage_channels(i), cfg_.msc, rng);
      in_ch = cfg_.stage_channels(i);
    }
    bottleneck_.emplace(params_, "bottleneck", cfg_.stage_channels(d), cfg_.bottleneck_channels(),
                        cfg_.msc, rng);
    // decoder stages, step j goes from level L = d-j+1 to L-1
    for (int j = 1; j <= d; ++j) {
      int L = d - j + 1;
      int nominal = cfg_.base_channels << L;        // channels restored before upsampling
      int next_nominal = nominal / 2;               // nominal count at level L-1
      int enc_f = nominal / 2;                      // encoder post-pool feature at level L
      int prev_aep = (j == 1) ? cfg_.bottleneck_channels() : 2 * nominal;
      std::string ap = "aep.stage" + std::to_string(j);
      aep_reduce_.emplace_back(params_, ap + ".reduce", prev_aep + enc_f, nominal, 1, rng);
      aep_up_.emplace_back(params_, ap + ".up", nominal, next_nominal, rng);
      aep_dspa_.emplace_back(params_, ap + ".dspa", 2 * next_nominal, cfg_.descriptors, rng);
      // The OEP state entering step j always carries the level's nominal
      // count: the bottleneck at j = 1 (base*2^d), then each step's output.
      std::string op = "oep.stage" + std::to_string(j);
      oep_up_.emplace_back(params_, op + ".up", nominal, next_nominal, rng);
      oep_reduce_.emplace_back(params_, op + ".reduce", 4 * next_nominal, next_nominal, 1, rng);
      if (cfg_.msc)
        oep_msc_.emplace_back(params_, op + ".msc", next_nominal, next_nominal, rng);
    }
    aux_head_ = Conv2d<T>(params_, "aep.head", 2 * cfg_.base_channels, 1, 1, rng);
    main_head_ = Conv2d<T>(params_, "oep.head", cfg_.base_channels, 1, 1, rng);
  }

  EncodeResult<T> encode(const ArrayPtr<T>& x, Tape<T>* tape, bool training) {
    cfg_.validate_input(x->c, x->h, x->w);
    EncodeResult<T> res;
    ArrayPtr<T> cur = x;
    for (auto& stage : stages_) {
      auto s = stage.forward(cur, tape, training);
      res.skips.push_back(s);
      cur = maxpool2(s, tape);
      res.pooled.push_back(cur);
    }
    res.bottom = bottleneck_->forward(cur, tape, training);
    return res;
  }

  AepResult<T> decode_aep(const EncodeResult<T>& enc, Tape<T>* tape, bool training) {
    (void)training;  // decoder reduces and transconvs carry no batch-dependent state
    const int d = cfg_.depth;
    check(static_cast<int>(enc.skips.size()) == d && static_cast<int>(enc.pooled.size()) == d,
          "decode_aep: encoder produced " + std::to_string(enc.skips.size()) +
              " stages, config expects " + std::to_string(d));
    AepResult<T> res;
    ArrayPtr<T> state = enc.bottom;
    for (int j = 1; j <= d; ++j) {
      int L = d - j + 1;
      auto fused = concat_channels<T>({state, enc.pooled[L - 1]}, tape);
      auto reduced = aep_reduce_[j - 1].forward(fused, tape);
      auto up = aep_up_[j - 1].forward(reduced, tape);
      res.features.push_back(up);
      auto m = concat_channels<T>({up, enc.skips[L - 1]}, tape);
      state = aep_dspa_[j - 1].forward(m, tape);
      res.states.push_back(state);
    }
    res.aux_map = sigmoid(aux_head_.forward(state, tape), tape);
    return res;
  }

  ArrayPtr<T> decode_oep(const EncodeResult<T>& enc, const AepResult<T>& aep, Tape<T>* tape,
                         bool training) {
    (void)training;
    const int d = cfg_.depth;
    check(static_cast<int>(aep.states.size()) == d,
          "decode_oep: AEP produced " + std::to_string(aep.states.size()) +
              " stages, config expects " + std::to_string(d));
    ArrayPtr<T> state = enc.bottom;
    for (int j = 1; j <= d; ++j) {
      int L = d - j + 1;
      // Upsample, then fuse with the same-resolution AEP state and encoder
      // skip. Taking A_j (not A_{j-1}) keeps every attention-refined state on
      // the main path, so the main loss supervises the whole auxiliary trunk.
      auto up = oep_up_[j - 1].forward(state, tape);
      auto fused = concat_channels<T>({up, aep.states[j - 1], enc.skips[L - 1]}, tape);
      auto reduced = oep_reduce_[j - 1].forward(fused, tape);
      state = cfg_.msc ? oep_msc_[j - 1].forward(reduced, tape) : reduced;
    }
    return sigmoid(main_head_.forward(state, tape), tape);
  }

  DualOutput<T> forward(const ArrayPtr<T>& x, Tape<T>* tape, bool training) {
    auto enc = encode(x, tape, training);
    auto aep = decode_aep(enc, tape, training);
    auto main = decode_oep(enc, aep, tape, training);
    return {aep.aux_map, main};
  }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const MrnConfig& config() const { return cfg_; }
  size_t parameter_count() const { return params_.learnable_count(); }

 private:
  MrnConfig cfg_;
  ParamStore<T> params_;
  std::vector<DoubleConv<T>> stages_;
  std::optional<DoubleConv<T>> bottleneck_;
  std::vector<Conv2d<T>> aep_reduce_;
  std::vector<TransConv2d<T>> aep_up_;
  std::vector<Dspa<T>> aep_dspa_;
  std::vector<Conv2d<T>> oep_reduce_;
  std::vector<TransConv2d<T>> oep_up_;
  std::vector<CascadeMsc<T>> oep_msc_;
  Conv2d<T> aux_head_, main_head_;
};

// Single-path encoder-decoder used as the comparison stand-in: the same
// contracting encoder (no MSC), one plain expansive path that concatenates
// the pre-pool skip after each upsampling step, no attention, no aux head.
template <typename T>
class Baseline {
 public:
  explicit Baseline(const MrnConfig& cfg, uint64_t init_seed = 1) : cfg_(cfg) {
    cfg_.validate();
    cfg_.msc = false;
    std::mt19937_64 rng(init_seed);
    const int d = cfg_.depth;
    int in_ch = cfg_.in_channels;
    for (int i = 1; i <= d; ++i) {
      stages_.emplace_back(params_, "encoder.stage" + std::to_string(i), in_ch,
                           cfg_.stage_channels(i), false, rng);
      in_ch = cfg_.stage_channels(i);
    }
    bottleneck_.emplace(params_, "bottleneck", cfg_.stage_channels(d), cfg_.bottleneck_channels(),
                        false, rng);
    for (int j = 1; j <= d; ++j) {
      int L = d - j + 1;
      int nominal = cfg_.base_channels << L;
      int next_nominal = nominal / 2;
      int prev = (j == 1) ? cfg_.bottleneck_channels() : next_nominal * 2;
      std::string pfx = "decoder.stage" + std::to_string(j);
      up_.emplace_back(params_, pfx + ".up", prev, next_nominal, rng);
      blocks_.emplace_back(params_, pfx, 2 * next_nominal, next_nominal, false, rng);
    }
    head_ = Conv2d<T>(params_, "decoder.head", cfg_.base_channels, 1, 1, rng);
  }

  ArrayPtr<T> forward(const ArrayPtr<T>& x, Tape<T>* tape, bool training) {
    cfg_.validate_input(x->c, x->h, x->w);
    std::vector<ArrayPtr<T>> skips;
    ArrayPtr<T> cur = x;
    for (auto& stage : stages_) {
      auto s = stage.forward(cur, tape, training);
      skips.push_back(s);
      cur = maxpool2(s, tape);
    }
    cur = bottleneck_->forward(cur, tape, training);
    const int d = cfg_.depth;
    for (int j = 1; j <= d; ++j) {
      int L = d - j + 1;
      auto up = up_[j - 1].forward(cur, tape);
      auto fused = concat_channels<T>({up, skips[L - 1]}, tape);
      cur = blocks_[j - 1].forward(fused, tape, training);
    }
    return sigmoid(head_.forward(cur, tape), tape);
  }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const MrnConfig& config() const { return cfg_; }
  size_t parameter_count() const { return params_.learnable_count(); }

 private:
  MrnConfig cfg_;
  ParamStore<T> params_;
  std::vector<DoubleConv<T>> stages_;
  std::optional<DoubleConv<T>> bottleneck_;
  std::vector<TransConv2d<T>> up_;
  std::vector<DoubleConv<T>> blocks_;
  Conv2d<T> head_;
};

}  // namespace mrn

#endif  // MRN_NETWORK_HPP
