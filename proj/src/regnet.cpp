#include "vicl/regnet.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace vicl::regnet {

using nlohmann::json;

void Normalizer::validate() const {
  if (min.size() != max.size() || min.size() == 0) {
    throw ValidationError("normalizer: empty or mismatched bounds");
  }
  for (int i = 0; i < min.size(); ++i) {
    if (!(min(i) < max(i))) {
      throw ValidationError("normalizer: min must be < max per channel");
    }
  }
}

VectorXd Normalizer::apply(const VectorXd& raw) const {
  return (raw - min).cwiseQuotient(max - min);
}

VectorXd Normalizer::invert(const VectorXd& unit) const {
  return min + unit.cwiseProduct(max - min);
}

void RegNetParams::validate() const {
  if (input_dim < 1 || hidden < 1 || output_dim < 1) {
    throw ValidationError("regnet: dimensions must be positive");
  }
  if (wx.rows() != 4 * hidden || wx.cols() != input_dim || wh.rows() != 4 * hidden ||
      wh.cols() != hidden || b.size() != 4 * hidden || wy.rows() != output_dim ||
      wy.cols() != hidden || by.size() != output_dim) {
    throw ValidationError("regnet: weight shapes inconsistent");
  }
  if (!wx.allFinite() || !wh.allFinite() || !b.allFinite() || !wy.allFinite() ||
      !by.allFinite()) {
    throw NumericError("regnet: non-finite weights");
  }
  in_norm.validate();
  out_norm.validate();
}

int RegNetParams::parameter_count() const {
  return static_cast<int>(wx.size() + wh.size() + b.size() + wy.size() + by.size());
}

VectorXd RegNetParams::flatten() const {
  VectorXd theta(parameter_count());
  int off = 0;
  auto put = [&](const double* data, int n) {
    theta.segment(off, n) = Eigen::Map<const VectorXd>(data, n);
    off += n;
  };
  put(wx.data(), static_cast<int>(wx.size()));
  put(wh.data(), static_cast<int>(wh.size()));
  put(b.data(), static_cast<int>(b.size()));
  put(wy.data(), static_cast<int>(wy.size()));
  put(by.data(), static_cast<int>(by.size()));
  return theta;
}

void RegNetParams::unflatten(const VectorXd& theta) {
  if (theta.size() != parameter_count()) throw ValidationError("regnet: flat size mismatch");
  int off = 0;
  auto get = [&](double* data, int n) {
    Eigen::Map<VectorXd>(data, n) = theta.segment(off, n);
    off += n;
  };
  get(wx.data(), static_cast<int>(wx.size()));
  get(wh.data(), static_cast<int>(wh.size()));
  get(b.data(), static_cast<int>(b.size()));
  get(wy.data(), static_cast<int>(wy.size()));
  get(by.data(), static_cast<int>(by.size()));
}

RegNetParams init_params(int input_dim, int hidden, int output_dim, Rng& rng) {
  RegNetParams p;
  p.input_dim = input_dim;
  p.hidden = hidden;
  p.output_dim = output_dim;
  double r = 1.0 / std::sqrt(static_cast<double>(hidden));
  auto fill = [&](MatrixXd& m, int rows, int cols) {
    m.resize(rows, cols);
    for (int c = 0; c < cols; ++c) {
      for (int rr = 0; rr < rows; ++rr) m(rr, c) = rng.uniform(-r, r);
    }
  };
  fill(p.wx, 4 * hidden, input_dim);
  fill(p.wh, 4 * hidden, hidden);
  p.b = VectorXd::Zero(4 * hidden);
  p.b.segment(hidden, hidden).setConstant(1.0);  // forget-gate bias
  fill(p.wy, output_dim, hidden);
  p.by = VectorXd::Zero(output_dim);
  p.in_norm.min = VectorXd::Zero(input_dim);
  p.in_norm.max = VectorXd::Ones(input_dim);
  p.out_norm.min = VectorXd::Zero(output_dim);
  p.out_norm.max = VectorXd::Ones(output_dim);
  return p;
}

namespace {

inline VectorXd sigmoid(const VectorXd& v) {
  return v.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}

}  // namespace

std::vector<VectorXd> forward(const RegNetParams& params, const std::vector<VectorXd>& inputs,
                              ForwardCache* cache) {
  params.validate();
  const int H = params.hidden;
  VectorXd h = VectorXd::Zero(H);
  VectorXd c = VectorXd::Zero(H);
  std::vector<VectorXd> out;
  out.reserve(inputs.size());
  if (cache) *cache = ForwardCache{};
  for (const VectorXd& x : inputs) {
    if (x.size() != params.input_dim) throw ValidationError("regnet forward: input dim mismatch");
    VectorXd z = params.wx * x + params.wh * h + params.b;
    VectorXd gi = sigmoid(z.segment(0, H));
    VectorXd gf = sigmoid(z.segment(H, H));
    VectorXd gg = z.segment(2 * H, H).array().tanh();
    VectorXd go = sigmoid(z.segment(3 * H, H));
    c = gf.cwiseProduct(c) + gi.cwiseProduct(gg);
    VectorXd tc = c.array().tanh();
    h = go.cwiseProduct(tc);
    VectorXd y = params.wy * h + params.by;
    out.push_back(y);
    if (cache) {
      cache->x.push_back(x);
      cache->i.push_back(gi);
      cache->f.push_back(gf);
      cache->g.push_back(gg);
      cache->o.push_back(go);
      cache->c.push_back(c);
      cache->tanh_c.push_back(tc);
      cache->h.push_back(h);
      cache->y.push_back(y);
    }
  }
  return out;
}

double mse_loss(const std::vector<VectorXd>& pred, const std::vector<VectorXd>& targets) {
  if (pred.size() != targets.size() || pred.empty()) {
    throw ValidationError("mse_loss: length mismatch");
  }
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    acc += (pred[t] - targets[t]).squaredNorm();
    count += pred[t].size();
  }
  return acc / static_cast<double>(count);
}

VectorXd Gradients::flatten() const {
  VectorXd theta(wx.size() + wh.size() + b.size() + wy.size() + by.size());
  int off = 0;
  auto put = [&](const double* data, int n) {
    theta.segment(off, n) = Eigen::Map<const VectorXd>(data, n);
    off += n;
  };
  put(wx.data(), static_cast<int>(wx.size()));
  put(wh.data(), static_cast<int>(wh.size()));
  put(b.data(), static_cast<int>(b.size()));
  put(wy.data(), static_cast<int>(wy.size()));
  put(by.data(), static_cast<int>(by.size()));
  return theta;
}

double Gradients::norm() const { return flatten().norm(); }

Gradients backward(const RegNetParams& params, const ForwardCache& cache,
                   const std::vector<VectorXd>& targets) {
  const int H = params.hidden;
  const auto T = cache.x.size();
  if (targets.size() != T || T == 0) throw ValidationError("backward: cache/target mismatch");

  Gradients g;
  g.wx = MatrixXd::Zero(params.wx.rows(), params.wx.cols());
  g.wh = MatrixXd::Zero(params.wh.rows(), params.wh.cols());
  g.b = VectorXd::Zero(params.b.size());
  g.wy = MatrixXd::Zero(params.wy.rows(), params.wy.cols());
  g.by = VectorXd::Zero(params.by.size());

  const double scale = 2.0 / (static_cast<double>(T) * params.output_dim);
  VectorXd dh_next = VectorXd::Zero(H);
  VectorXd dc_next = VectorXd::Zero(H);
  for (std::ptrdiff_t t = static_cast<std::ptrdiff_t>(T) - 1; t >= 0; --t) {
    VectorXd dy = scale * (cache.y[t] - targets[t]);
    g.wy += dy * cache.h[t].transpose();
    g.by += dy;
    VectorXd dh = params.wy.transpose() * dy + dh_next;

    const VectorXd& tc = cache.tanh_c[t];
    VectorXd do_ = dh.cwiseProduct(tc);
    VectorXd dc = dh.cwiseProduct(cache.o[t])
                      .cwiseProduct(VectorXd::Ones(H) - tc.cwiseProduct(tc)) +
                  dc_next;
    VectorXd c_prev = t > 0 ? cache.c[t - 1] : VectorXd::Zero(H);
    VectorXd di = dc.cwiseProduct(cache.g[t]);
    VectorXd df = dc.cwiseProduct(c_prev);
    VectorXd dg = dc.cwiseProduct(cache.i[t]);
    dc_next = dc.cwiseProduct(cache.f[t]);

    VectorXd dz(4 * H);
    dz.segment(0, H) =
        di.cwiseProduct(cache.i[t]).cwiseProduct(VectorXd::Ones(H) - cache.i[t]);
    dz.segment(H, H) =
        df.cwiseProduct(cache.f[t]).cwiseProduct(VectorXd::Ones(H) - cache.f[t]);
    dz.segment(2 * H, H) =
        dg.cwiseProduct(VectorXd::Ones(H) - cache.g[t].cwiseProduct(cache.g[t]));
    dz.segment(3 * H, H) = do_.cwiseProduct(cache.o[t]).cwiseProduct(VectorXd::Ones(H) - cache.o[t]);

    g.wx += dz * cache.x[t].transpose();
    VectorXd h_prev = t > 0 ? cache.h[t - 1] : VectorXd::Zero(H);
    g.wh += dz * h_prev.transpose();
    g.b += dz;
    dh_next = params.wh.transpose() * dz;
  }
  return g;
}

namespace {

struct Adam {
  VectorXd m, v;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int t = 0;

  explicit Adam(int n) : m(VectorXd::Zero(n)), v(VectorXd::Zero(n)) {}

  VectorXd step(const VectorXd& grad, double lr) {
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    VectorXd mh = m / (1.0 - std::pow(beta1, t));
    VectorXd vh = v / (1.0 - std::pow(beta2, t));
    return -lr * mh.cwiseQuotient(vh.cwiseSqrt().array().matrix() +
                                  VectorXd::Constant(mh.size(), eps));
  }
};

Normalizer bounds_from_data(const std::vector<Sequence>& dataset, bool inputs) {
  const int dim =
      static_cast<int>(inputs ? dataset[0].inputs[0].size() : dataset[0].targets[0].size());
  VectorXd lo = VectorXd::Constant(dim, std::numeric_limits<double>::infinity());
  VectorXd hi = VectorXd::Constant(dim, -std::numeric_limits<double>::infinity());
  for (const auto& seq : dataset) {
    const auto& rows = inputs ? seq.inputs : seq.targets;
    for (const auto& r : rows) {
      lo = lo.cwiseMin(r);
      hi = hi.cwiseMax(r);
    }
  }
  // Widen degenerate channels so the affine map stays invertible.
  for (int i = 0; i < dim; ++i) {
    if (hi(i) - lo(i) < 1e-9) {
      lo(i) -= 0.5;
      hi(i) += 0.5;
    }
  }
  return Normalizer{lo, hi};
}

}  // namespace

RegNetParams train(const std::vector<Sequence>& dataset, const TrainOptions& options,
                   TrainReport* report) {
  if (dataset.size() < 2) throw ValidationError("train: need >= 2 sequences");
  for (const auto& s : dataset) {
    if (s.inputs.size() != s.targets.size() || s.inputs.size() < 2) {
      throw ValidationError("train: sequence inputs/targets mismatch");
    }
  }
  const int input_dim = static_cast<int>(dataset[0].inputs[0].size());
  const int output_dim = static_cast<int>(dataset[0].targets[0].size());

  Rng rng(options.seed + 0x2e7b1ULL);
  RegNetParams params = init_params(input_dim, options.hidden, output_dim, rng);
  params.in_norm = bounds_from_data(dataset, true);
  params.out_norm = bounds_from_data(dataset, false);

  // Split held-out sequences, then connect the training demos end-to-end.
  auto n_val = static_cast<std::size_t>(std::max(
      1.0, std::floor(options.val_fraction * static_cast<double>(dataset.size()))));
  if (n_val >= dataset.size()) n_val = dataset.size() - 1;
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<const Sequence*> train_seqs, val_seqs;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < dataset.size() - n_val ? train_seqs : val_seqs).push_back(&dataset[order[i]]);
  }

  std::vector<VectorXd> stream_x, stream_y;
  for (const Sequence* s : train_seqs) {
    for (std::size_t t = 0; t < s->inputs.size(); ++t) {
      stream_x.push_back(params.in_norm.apply(s->inputs[t]));
      stream_y.push_back(params.out_norm.apply(s->targets[t]));
    }
  }
  std::vector<std::vector<VectorXd>> val_x, val_y;
  for (const Sequence* s : val_seqs) {
    std::vector<VectorXd> xs, ys;
    for (std::size_t t = 0; t < s->inputs.size(); ++t) {
      xs.push_back(params.in_norm.apply(s->inputs[t]));
      ys.push_back(params.out_norm.apply(s->targets[t]));
    }
    val_x.push_back(std::move(xs));
    val_y.push_back(std::move(ys));
  }

  const int chunk = std::max(2, options.chunk_len);
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + chunk <= stream_x.size(); s += chunk) starts.push_back(s);
  if (starts.empty()) starts.push_back(0);

  Adam adam(params.parameter_count());
  if (report) *report = TrainReport{};
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(starts);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t b0 = 0; b0 < starts.size(); b0 += options.batch_size) {
      VectorXd grad = VectorXd::Zero(params.parameter_count());
      double batch_loss = 0.0;
      int in_batch = 0;
      for (std::size_t k = b0; k < std::min(b0 + options.batch_size, starts.size()); ++k) {
        std::size_t s = starts[k];
        std::size_t len = std::min<std::size_t>(chunk, stream_x.size() - s);
        std::vector<VectorXd> xs(stream_x.begin() + s, stream_x.begin() + s + len);
        std::vector<VectorXd> ys(stream_y.begin() + s, stream_y.begin() + s + len);
        ForwardCache cache;
        auto pred = forward(params, xs, &cache);
        batch_loss += mse_loss(pred, ys);
        grad += backward(params, cache, ys).flatten();
        ++in_batch;
      }
      if (in_batch == 0) continue;
      grad /= in_batch;
      batch_loss /= in_batch;
      if (!std::isfinite(batch_loss)) {
        throw NumericError("train: loss diverged (NaN) at epoch " + std::to_string(epoch));
      }
      double gn = grad.norm();
      if (gn > options.clip_norm) grad *= options.clip_norm / gn;
      VectorXd theta = params.flatten() + adam.step(grad, options.learning_rate);
      params.unflatten(theta);
      epoch_loss += batch_loss;
      ++batches;
    }
    epoch_loss /= std::max(1, batches);

    double val_loss = 0.0;
    for (std::size_t v = 0; v < val_x.size(); ++v) {
      auto pred = forward(params, val_x[v]);
      val_loss += mse_loss(pred, val_y[v]);
    }
    val_loss /= std::max<std::size_t>(1, val_x.size());
    if (report) {
      report->train_loss.push_back(epoch_loss);
      report->val_loss.push_back(val_loss);
    }
  }
  return params;
}

std::vector<VectorXd> predict(const RegNetParams& params, const std::vector<VectorXd>& raw_inputs,
                              bool* excursion) {
  std::vector<VectorXd> normed;
  normed.reserve(raw_inputs.size());
  for (const auto& r : raw_inputs) normed.push_back(params.in_norm.apply(r));
  auto unit = forward(params, normed);
  std::vector<VectorXd> out;
  out.reserve(unit.size());
  bool flag = false;
  VectorXd span = params.out_norm.max - params.out_norm.min;
  for (const auto& u : unit) {
    VectorXd y = params.out_norm.invert(u);
    for (int i = 0; i < y.size(); ++i) {
      if (y(i) < params.out_norm.min(i) - 0.1 * span(i) ||
          y(i) > params.out_norm.max(i) + 0.1 * span(i)) {
        flag = true;
      }
    }
    out.push_back(y);
  }
  if (excursion) *excursion = flag;
  return out;
}

Metrics metrics(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size()) throw ValidationError("metrics: length mismatch");
  if (pred.size() < 2) throw ValidationError("metrics: need >= 2 samples");
  const auto n = static_cast<double>(pred.size());
  double se = 0.0, mp = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    se += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    mp += pred[i];
    mt += truth[i];
  }
  mp /= n;
  mt /= n;
  double cov = 0.0, vp = 0.0, vt = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    cov += (pred[i] - mp) * (truth[i] - mt);
    vp += (pred[i] - mp) * (pred[i] - mp);
    vt += (truth[i] - mt) * (truth[i] - mt);
  }
  if (vt <= 0.0) throw ValidationError("metrics: truth variance is zero, correlation undefined");
  Metrics m;
  m.rmse = std::sqrt(se / n);
  m.correlation = vp > 0.0 ? cov / std::sqrt(vp * vt) : 0.0;
  m.correlation = std::clamp(m.correlation, -1.0, 1.0);
  return m;
}

OnlinePredictor::OnlinePredictor(RegNetParams params) : params_(std::move(params)) {
  params_.validate();
  reset();
}

void OnlinePredictor::reset() {
  h_ = VectorXd::Zero(params_.hidden);
  c_ = VectorXd::Zero(params_.hidden);
}

double OnlinePredictor::step(const VectorXd& raw_input) {
  const int H = params_.hidden;
  VectorXd x = params_.in_norm.apply(raw_input);
  VectorXd z = params_.wx * x + params_.wh * h_ + params_.b;
  VectorXd gi = sigmoid(z.segment(0, H));
  VectorXd gf = sigmoid(z.segment(H, H));
  VectorXd gg = z.segment(2 * H, H).array().tanh();
  VectorXd go = sigmoid(z.segment(3 * H, H));
  c_ = gf.cwiseProduct(c_) + gi.cwiseProduct(gg);
  VectorXd tc = c_.array().tanh();
  h_ = go.cwiseProduct(tc);
  VectorXd y = params_.wy * h_ + params_.by;
  return params_.out_norm.invert(y)(0);
}

RegulatoryFactor regulatory_factor(const std::vector<double>& pred_alpha_c, double baseline_alpha,
                                   double rho_min, double rho_max) {
  if (!(baseline_alpha > 0.0)) {
    throw ValidationError("regulatory_factor: baseline must be > 0");
  }
  if (!(rho_min > 0.0) || !(rho_max >= rho_min)) {
    throw ValidationError("regulatory_factor: bad clip bounds");
  }
  RegulatoryFactor out;
  out.rho_min = rho_min;
  out.rho_max = rho_max;
  out.rho.reserve(pred_alpha_c.size());
  for (double a : pred_alpha_c) {
    if (!std::isfinite(a)) throw NumericError("regulatory_factor: non-finite prediction");
    out.rho.push_back(std::clamp(a / baseline_alpha, rho_min, rho_max));
  }
  return out;
}

namespace {

json matrix_to_json(const MatrixXd& m) {
  std::vector<double> v(m.size());
  Eigen::Map<MatrixXd>(v.data(), m.rows(), m.cols()) = m;
  return json(v);
}

MatrixXd matrix_from_json(const json& j, int rows, int cols) {
  auto v = j.get<std::vector<double>>();
  if (static_cast<int>(v.size()) != rows * cols) {
    throw ValidationError("checkpoint parse: weight block size mismatch");
  }
  return Eigen::Map<MatrixXd>(v.data(), rows, cols);
}

}  // namespace

std::string params_to_json(const RegNetParams& params) {
  params.validate();
  json out;
  out["format"] = "vicl-regnet";
  out["version"] = 1;
  out["input_dim"] = params.input_dim;
  out["hidden"] = params.hidden;
  out["output_dim"] = params.output_dim;
  out["wx"] = matrix_to_json(params.wx);
  out["wh"] = matrix_to_json(params.wh);
  out["b"] = std::vector<double>(params.b.data(), params.b.data() + params.b.size());
  out["wy"] = matrix_to_json(params.wy);
  out["by"] = std::vector<double>(params.by.data(), params.by.data() + params.by.size());
  out["in_min"] = std::vector<double>(params.in_norm.min.data(),
                                      params.in_norm.min.data() + params.in_norm.min.size());
  out["in_max"] = std::vector<double>(params.in_norm.max.data(),
                                      params.in_norm.max.data() + params.in_norm.max.size());
  out["out_min"] = std::vector<double>(params.out_norm.min.data(),
                                       params.out_norm.min.data() + params.out_norm.min.size());
  out["out_max"] = std::vector<double>(params.out_norm.max.data(),
                                       params.out_norm.max.data() + params.out_norm.max.size());
  out["baseline_alpha"] = params.baseline_alpha;
  return out.dump(1);
}

RegNetParams params_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint parse: ") + e.what());
  }
  try {
    if (j.at("format") != "vicl-regnet") throw ValidationError("checkpoint parse: wrong format tag");
    if (j.at("version") != 1) throw ValidationError("checkpoint parse: unsupported version");
    RegNetParams p;
    p.input_dim = j.at("input_dim").get<int>();
    p.hidden = j.at("hidden").get<int>();
    p.output_dim = j.at("output_dim").get<int>();
    p.wx = matrix_from_json(j.at("wx"), 4 * p.hidden, p.input_dim);
    p.wh = matrix_from_json(j.at("wh"), 4 * p.hidden, p.hidden);
    auto b = j.at("b").get<std::vector<double>>();
    p.b = Eigen::Map<VectorXd>(b.data(), static_cast<int>(b.size()));
    p.wy = matrix_from_json(j.at("wy"), p.output_dim, p.hidden);
    auto by = j.at("by").get<std::vector<double>>();
    p.by = Eigen::Map<VectorXd>(by.data(), static_cast<int>(by.size()));
    auto dv = [&](const char* key) {
      auto v = j.at(key).get<std::vector<double>>();
      return VectorXd(Eigen::Map<VectorXd>(v.data(), static_cast<int>(v.size())));
    };
    p.in_norm.min = dv("in_min");
    p.in_norm.max = dv("in_max");
    p.out_norm.min = dv("out_min");
    p.out_norm.max = dv("out_max");
    p.baseline_alpha = j.at("baseline_alpha").get<double>();
    p.validate();
    return p;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint parse: missing field: ") + e.what());
  }
}

void save_params(const RegNetParams& params, const std::string& path) {
  write_text_file(path, params_to_json(params));
}

RegNetParams load_params(const std::string& path) {
  return params_from_json(read_text_file(path));
}

}  // namespace vicl::regnet
