#include "vicl/tpgmm.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <limits>

namespace vicl::tpgmm {

using nlohmann::json;

double Gaussian::log_pdf(const VectorXd& x) const {
  const auto d = static_cast<double>(mean.size());
  Eigen::LLT<MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw NumericError("gaussian: covariance not positive definite");
  }
  VectorXd diff = x - mean;
  VectorXd z = llt.matrixL().solve(diff);
  double log_det = 0.0;
  for (int i = 0; i < mean.size(); ++i) log_det += std::log(llt.matrixL()(i, i));
  return -0.5 * z.squaredNorm() - log_det - 0.5 * d * std::log(2.0 * M_PI);
}

TaskFrame lift_pose_frame(const Matrix3d& rotation, const Vector3d& translation) {
  // Quaternion of the rotation, then its left-multiplication matrix.
  Eigen::Quaterniond q(rotation);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  Eigen::Matrix4d ql;
  ql << q.w(), -q.x(), -q.y(), -q.z(),
        q.x(),  q.w(), -q.z(),  q.y(),
        q.y(),  q.z(),  q.w(), -q.x(),
        q.z(), -q.y(),  q.x(),  q.w();
  TaskFrame frame;
  frame.A = MatrixXd::Identity(kFeatureDim, kFeatureDim);
  frame.A.block<3, 3>(kPosDim, kPosDim) = rotation;
  frame.A.block<4, 4>(kQuatDim, kQuatDim) = ql;
  frame.b = VectorXd::Zero(kFeatureDim);
  frame.b.segment<3>(kPosDim) = translation;
  frame.validate();
  return frame;
}

MatrixXd to_frame(const MatrixXd& zeta, const TaskFrame& frame) {
  frame.validate();
  if (zeta.cols() != frame.A.rows()) throw ValidationError("to_frame: dimension mismatch");
  Eigen::PartialPivLU<MatrixXd> lu(frame.A);
  MatrixXd out(zeta.rows(), zeta.cols());
  for (int r = 0; r < zeta.rows(); ++r) {
    out.row(r) = lu.solve(zeta.row(r).transpose() - frame.b).transpose();
  }
  return out;
}

MatrixXd from_frame(const MatrixXd& local, const TaskFrame& frame) {
  frame.validate();
  if (local.cols() != frame.A.rows()) throw ValidationError("from_frame: dimension mismatch");
  MatrixXd out(local.rows(), local.cols());
  for (int r = 0; r < local.rows(); ++r) {
    out.row(r) = (frame.A * local.row(r).transpose() + frame.b).transpose();
  }
  return out;
}

void TpgmmModel::validate() const {
  if (components < 1) throw ValidationError("tpgmm: J must be >= 1");
  if (frames.empty()) throw ValidationError("tpgmm: need >= 1 frame");
  if (std::abs(weights.sum() - 1.0) > 1e-9) throw ValidationError("tpgmm: weights must sum to 1");
  for (const auto& fr : frames) {
    if (static_cast<int>(fr.size()) != components) {
      throw ValidationError("tpgmm: component count mismatch across frames");
    }
    for (const auto& g : fr) {
      if (g.mean.size() != dim || g.cov.rows() != dim || g.cov.cols() != dim) {
        throw ValidationError("tpgmm: component dimension mismatch");
      }
    }
  }
}

namespace {

double log_sum_exp(const VectorXd& v) {
  double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

// k-means++ seeding plus a few Lloyd iterations on the horizontally
// concatenated per-frame features; returns hard assignments.
std::vector<int> kmeans_init(const MatrixXd& data, int k, Rng& rng) {
  const auto n = static_cast<int>(data.rows());
  std::vector<VectorXd> centers;
  centers.reserve(k);
  centers.push_back(data.row(static_cast<int>(rng.index(n))).transpose());
  VectorXd d2 = (data.rowwise() - centers[0].transpose()).rowwise().squaredNorm();
  while (static_cast<int>(centers.size()) < k) {
    double total = d2.sum();
    int pick = 0;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        acc += d2(i);
        if (acc >= r) { pick = i; break; }
      }
    } else {
      pick = static_cast<int>(rng.index(n));
    }
    centers.push_back(data.row(pick).transpose());
    VectorXd nd = (data.rowwise() - centers.back().transpose()).rowwise().squaredNorm();
    d2 = d2.cwiseMin(nd);
  }
  std::vector<int> assign(n, 0);
  for (int it = 0; it < 10; ++it) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        double dist = (data.row(i).transpose() - centers[j]).squaredNorm();
        if (dist < best_d) { best_d = dist; best = j; }
      }
      if (assign[i] != best) { assign[i] = best; changed = true; }
    }
    for (int j = 0; j < k; ++j) {
      VectorXd sum = VectorXd::Zero(data.cols());
      int count = 0;
      for (int i = 0; i < n; ++i) {
        if (assign[i] == j) { sum += data.row(i).transpose(); ++count; }
      }
      if (count > 0) centers[j] = sum / count;
    }
    if (!changed) break;
  }
  return assign;
}

}  // namespace

TpgmmModel em_fit(const std::vector<MatrixXd>& data_per_frame, int components,
                  const EmOptions& options, EmReport* report) {
  if (data_per_frame.empty()) throw ValidationError("em_fit: no frames");
  if (components < 1) throw ValidationError("em_fit: J must be >= 1");
  const auto n_frames = static_cast<int>(data_per_frame.size());
  const auto n = static_cast<int>(data_per_frame[0].rows());
  const auto dim = static_cast<int>(data_per_frame[0].cols());
  for (const auto& d : data_per_frame) {
    if (d.rows() != n || d.cols() != dim) throw ValidationError("em_fit: frame data mismatch");
  }
  if (n < 10 * components * dim) {
    throw ValidationError("em_fit: need >= 10*J*dim samples (" +
                          std::to_string(10 * components * dim) + "), got " + std::to_string(n));
  }

  // Init from k-means on the concatenated per-frame view.
  MatrixXd concat(n, dim * n_frames);
  for (int f = 0; f < n_frames; ++f) concat.middleCols(f * dim, dim) = data_per_frame[f];
  Rng rng(options.seed + 0x7c15ULL);
  std::vector<int> assign = kmeans_init(concat, components, rng);

  TpgmmModel model;
  model.components = components;
  model.dim = dim;
  model.weights = VectorXd::Zero(components);
  model.frames.assign(n_frames, std::vector<Gaussian>(components));
  MatrixXd resp = MatrixXd::Zero(n, components);
  for (int i = 0; i < n; ++i) resp(i, assign[i]) = 1.0;

  // Covariances are regularized with an eigenvalue floor, which is the exact
  // M-step maximizer over the family {Sigma >= reg I}; an additive ridge
  // would break EM monotonicity on degenerate dimensions.
  auto m_step = [&](const MatrixXd& gamma) {
    VectorXd nk = gamma.colwise().sum();
    for (int j = 0; j < components; ++j) {
      double denom = std::max(nk(j), 1e-12);
      model.weights(j) = nk(j) / n;
      for (int f = 0; f < n_frames; ++f) {
        const MatrixXd& x = data_per_frame[f];
        VectorXd mu = (x.transpose() * gamma.col(j)) / denom;
        MatrixXd centered = x.rowwise() - mu.transpose();
        MatrixXd sigma = (centered.transpose() * (gamma.col(j).asDiagonal() * centered)) / denom;
        sigma = 0.5 * (sigma + sigma.transpose());
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(sigma);
        VectorXd floored = es.eigenvalues().cwiseMax(options.regularization);
        sigma = es.eigenvectors() * floored.asDiagonal() * es.eigenvectors().transpose();
        model.frames[f][j] = Gaussian{mu, 0.5 * (sigma + sigma.transpose())};
      }
    }
    model.weights /= model.weights.sum();
  };
  m_step(resp);

  int pruned = 0;
  std::vector<double> trace;
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < options.max_iter; ++iter) {
    // E-step: joint responsibility over the product of per-frame likelihoods.
    MatrixXd log_resp(n, components);
    for (int j = 0; j < components; ++j) {
      for (int i = 0; i < n; ++i) {
        double lp = std::log(std::max(model.weights(j), 1e-300));
        for (int f = 0; f < n_frames; ++f) {
          lp += model.frames[f][j].log_pdf(data_per_frame[f].row(i).transpose());
        }
        log_resp(i, j) = lp;
      }
    }
    double ll = 0.0;
    for (int i = 0; i < n; ++i) {
      double lse = log_sum_exp(log_resp.row(i).transpose());
      ll += lse;
      for (int j = 0; j < components; ++j) {
        log_resp(i, j) = std::exp(log_resp(i, j) - lse);
      }
    }
    trace.push_back(ll);

    m_step(log_resp);

    // Prune degenerate components.
    std::vector<int> keep;
    for (int j = 0; j < components; ++j) {
      if (model.weights(j) >= 1e-6) keep.push_back(j);
    }
    if (static_cast<int>(keep.size()) < components) {
      pruned += components - static_cast<int>(keep.size());
      VectorXd w(keep.size());
      std::vector<std::vector<Gaussian>> fr(n_frames, std::vector<Gaussian>(keep.size()));
      for (std::size_t m = 0; m < keep.size(); ++m) {
        w(m) = model.weights(keep[m]);
        for (int f = 0; f < n_frames; ++f) fr[f][m] = model.frames[f][keep[m]];
      }
      model.weights = w / w.sum();
      model.frames = fr;
      components = static_cast<int>(keep.size());
      model.components = components;
      prev_ll = -std::numeric_limits<double>::infinity();
      continue;
    }

    if (iter > 0 && ll - prev_ll < options.tol) { prev_ll = ll; break; }
    prev_ll = ll;
  }

  if (report) {
    report->log_likelihood = trace;
    report->pruned_components = pruned;
  }
  model.validate();
  return model;
}

std::vector<std::vector<Gaussian>> transport(const TpgmmModel& model,
                                             const std::vector<TaskFrame>& frames) {
  model.validate();
  if (static_cast<int>(frames.size()) != model.n_frames()) {
    throw ValidationError("transport: frame count mismatch");
  }
  std::vector<std::vector<Gaussian>> out(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    frames[f].validate();
    out[f].resize(model.components);
    for (int j = 0; j < model.components; ++j) {
      const Gaussian& g = model.frames[f][j];
      out[f][j].mean = frames[f].A * g.mean + frames[f].b;
      out[f][j].cov = frames[f].A * g.cov * frames[f].A.transpose();
    }
  }
  return out;
}

Gaussian poe(const std::vector<Gaussian>& experts, bool* regularized) {
  if (experts.empty()) throw ValidationError("poe: no experts");
  const auto dim = experts[0].mean.size();
  MatrixXd precision_sum = MatrixXd::Zero(dim, dim);
  VectorXd weighted_mean = VectorXd::Zero(dim);
  for (const auto& e : experts) {
    if (e.mean.size() != dim) throw ValidationError("poe: dimension mismatch");
    Eigen::LLT<MatrixXd> llt(e.cov);
    if (llt.info() != Eigen::Success) throw NumericError("poe: expert covariance not SPD");
    MatrixXd prec = llt.solve(MatrixXd::Identity(dim, dim));
    precision_sum += prec;
    weighted_mean += prec * e.mean;
  }
  bool ridge = false;
  Eigen::LLT<MatrixXd> llt(precision_sum);
  if (llt.info() != Eigen::Success ||
      precision_sum.llt().rcond() < 1e-14) {
    precision_sum += 1e-9 * MatrixXd::Identity(dim, dim);
    llt.compute(precision_sum);
    ridge = true;
  }
  if (regularized) *regularized = ridge;
  Gaussian out;
  out.cov = llt.solve(MatrixXd::Identity(dim, dim));
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  out.mean = out.cov * weighted_mean;
  return out;
}

Gaussian gmr_condition(const VectorXd& weights, const std::vector<Gaussian>& components,
                       const std::vector<int>& in_dims, const std::vector<int>& out_dims,
                       const VectorXd& in_value) {
  if (components.empty()) throw ValidationError("gmr: no components");
  const auto j_count = static_cast<int>(components.size());
  const auto ni = static_cast<int>(in_dims.size());
  const auto no = static_cast<int>(out_dims.size());

  VectorXd log_w(j_count);
  std::vector<VectorXd> cond_mean(j_count);
  std::vector<MatrixXd> cond_cov(j_count);
  for (int j = 0; j < j_count; ++j) {
    const Gaussian& g = components[j];
    VectorXd mu_i(ni), mu_o(no);
    MatrixXd s_ii(ni, ni), s_oi(no, ni), s_oo(no, no);
    for (int a = 0; a < ni; ++a) {
      mu_i(a) = g.mean(in_dims[a]);
      for (int b = 0; b < ni; ++b) s_ii(a, b) = g.cov(in_dims[a], in_dims[b]);
    }
    for (int a = 0; a < no; ++a) {
      mu_o(a) = g.mean(out_dims[a]);
      for (int b = 0; b < ni; ++b) s_oi(a, b) = g.cov(out_dims[a], in_dims[b]);
      for (int b = 0; b < no; ++b) s_oo(a, b) = g.cov(out_dims[a], out_dims[b]);
    }
    Eigen::LLT<MatrixXd> llt(s_ii);
    if (llt.info() != Eigen::Success) throw NumericError("gmr: singular input marginal");
    VectorXd diff = in_value - mu_i;
    MatrixXd gain = s_oi * llt.solve(MatrixXd::Identity(ni, ni));
    cond_mean[j] = mu_o + gain * diff;
    cond_cov[j] = s_oo - gain * s_oi.transpose();

    Gaussian marg{mu_i, s_ii};
    log_w(j) = std::log(std::max(weights(j), 1e-300)) + marg.log_pdf(in_value);
  }
  double lse = log_sum_exp(log_w);
  VectorXd w = (log_w.array() - lse).exp();

  Gaussian out;
  out.mean = VectorXd::Zero(no);
  for (int j = 0; j < j_count; ++j) out.mean += w(j) * cond_mean[j];
  out.cov = MatrixXd::Zero(no, no);
  for (int j = 0; j < j_count; ++j) {
    VectorXd dm = cond_mean[j] - out.mean;
    out.cov += w(j) * (cond_cov[j] + dm * dm.transpose());
  }
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

Reproduction reproduce(const TpgmmModel& model, const std::vector<TaskFrame>& frames, int T) {
  if (T < 2) throw ValidationError("reproduce: T must be >= 2");
  model.validate();
  auto world = transport(model, frames);

  Reproduction rep;
  rep.per_frame.resize(world.size());

  // PoE-combined components (Eq. of the two-frame product per component).
  std::vector<Gaussian> combined(model.components);
  for (int j = 0; j < model.components; ++j) {
    std::vector<Gaussian> experts;
    experts.reserve(world.size());
    for (const auto& fr : world) experts.push_back(fr[j]);
    bool reg = false;
    combined[j] = poe(experts, &reg);
    rep.poe_regularized = rep.poe_regularized || reg;
  }

  std::vector<int> in_dims = {kPhaseDim};
  std::vector<int> out_dims;
  for (int d = 1; d < kFeatureDim; ++d) out_dims.push_back(d);
  std::vector<int> pos_dims = {kPosDim, kPosDim + 1, kPosDim + 2};

  for (int t = 0; t < T; ++t) {
    double phase = static_cast<double>(t) / (T - 1);
    if (phase < model.phase_min - 1e-9 || phase > model.phase_max + 1e-9) {
      rep.extrapolated = true;
    }
    VectorXd pv(1);
    pv << phase;

    Gaussian cond = gmr_condition(model.weights, combined, in_dims, out_dims, pv);
    rep.combined.mean.push_back(cond.mean);
    rep.combined.cov.push_back(cond.cov);

    Vector3d pos = cond.mean.segment<3>(kPosDim - 1);  // out_dims start at feature dim 1
    Eigen::Vector4d quat = canonical_quat(cond.mean.segment<4>(kQuatDim - 1));
    Vector3d stiff = cond.mean.segment<3>(kStiffDim - 1).array().exp();
    rep.position.push_back(pos);
    rep.quaternion.push_back(quat);
    rep.stiffness_diag.push_back(stiff);

    for (std::size_t f = 0; f < world.size(); ++f) {
      Gaussian g = gmr_condition(model.weights, world[f], in_dims, pos_dims, pv);
      rep.per_frame[f].mean.push_back(g.mean);
      rep.per_frame[f].cov.push_back(g.cov);
    }
  }
  return rep;
}

double bic(const TpgmmModel& model, const std::vector<MatrixXd>& data_per_frame) {
  model.validate();
  const auto n = static_cast<int>(data_per_frame[0].rows());
  double ll = 0.0;
  for (int i = 0; i < n; ++i) {
    VectorXd lp(model.components);
    for (int j = 0; j < model.components; ++j) {
      double v = std::log(std::max(model.weights(j), 1e-300));
      for (int f = 0; f < model.n_frames(); ++f) {
        v += model.frames[f][j].log_pdf(data_per_frame[f].row(i).transpose());
      }
      lp(j) = v;
    }
    ll += log_sum_exp(lp);
  }
  const double d = model.dim;
  double params_per_component = model.n_frames() * (d + d * (d + 1) / 2.0) + 1.0;
  double k = model.components * params_per_component - 1.0;
  return -2.0 * ll + k * std::log(static_cast<double>(n));
}

namespace {

json gaussian_to_json(const Gaussian& g) {
  json out;
  out["mean"] = std::vector<double>(g.mean.data(), g.mean.data() + g.mean.size());
  std::vector<double> cov(g.cov.size());
  Eigen::Map<MatrixXd>(cov.data(), g.cov.rows(), g.cov.cols()) = g.cov;
  out["cov"] = cov;
  return out;
}

Gaussian gaussian_from_json(const json& j, int dim) {
  Gaussian g;
  auto mean = j.at("mean").get<std::vector<double>>();
  auto cov = j.at("cov").get<std::vector<double>>();
  if (static_cast<int>(mean.size()) != dim || static_cast<int>(cov.size()) != dim * dim) {
    throw ValidationError("model parse: component dimension mismatch");
  }
  g.mean = Eigen::Map<VectorXd>(mean.data(), dim);
  g.cov = Eigen::Map<MatrixXd>(cov.data(), dim, dim);
  return g;
}

}  // namespace

std::string model_to_json(const TpgmmModel& model) {
  model.validate();
  json out;
  out["format"] = "vicl-tpgmm";
  out["version"] = 1;
  out["components"] = model.components;
  out["dim"] = model.dim;
  out["phase_min"] = model.phase_min;
  out["phase_max"] = model.phase_max;
  out["weights"] = std::vector<double>(model.weights.data(),
                                       model.weights.data() + model.weights.size());
  json frames = json::array();
  for (const auto& fr : model.frames) {
    json comps = json::array();
    for (const auto& g : fr) comps.push_back(gaussian_to_json(g));
    frames.push_back(comps);
  }
  out["frames"] = frames;
  return out.dump(1);
}

TpgmmModel model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model parse: ") + e.what());
  }
  try {
    if (j.at("format") != "vicl-tpgmm") throw ValidationError("model parse: wrong format tag");
    if (j.at("version") != 1) throw ValidationError("model parse: unsupported version");
    TpgmmModel model;
    model.components = j.at("components").get<int>();
    model.dim = j.at("dim").get<int>();
    model.phase_min = j.at("phase_min").get<double>();
    model.phase_max = j.at("phase_max").get<double>();
    auto w = j.at("weights").get<std::vector<double>>();
    model.weights = Eigen::Map<VectorXd>(w.data(), static_cast<int>(w.size()));
    for (const auto& fr : j.at("frames")) {
      std::vector<Gaussian> comps;
      for (const auto& g : fr) comps.push_back(gaussian_from_json(g, model.dim));
      model.frames.push_back(comps);
    }
    model.validate();
    return model;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model parse: missing field: ") + e.what());
  }
}

void save_model(const TpgmmModel& model, const std::string& path) {
  write_text_file(path, model_to_json(model));
}

TpgmmModel load_model(const std::string& path) { return model_from_json(read_text_file(path)); }

}  // namespace vicl::tpgmm
