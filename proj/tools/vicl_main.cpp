#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "vicl/common.hpp"
#include "vicl/datamodel.hpp"
#include "vicl/pipeline.hpp"
#include "vicl/regnet.hpp"
#include "vicl/scenario.hpp"
#include "vicl/schedule.hpp"
#include "vicl/stiffness.hpp"
#include "vicl/tpgmm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vicl;

namespace {

constexpr const char* kToolVersion = "0.1.0";

struct Cli {
  std::string config_path;
  std::string out_dir;
  std::string method;
  std::string scenario;
  std::string plant;
  int jobs = 1;
  std::uint64_t seed = 0;
  bool seed_set = false;

  json config = json::object();
  std::string config_bytes;
};

json section(const json& cfg, const std::string& name) {
  if (cfg.contains(name) && cfg.at(name).is_object()) return cfg.at(name);
  return json::object();
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (j.contains(key)) return j.at(key).get<T>();
  return fallback;
}

std::string out_root(const Cli& cli) {
  if (!cli.out_dir.empty()) return cli.out_dir;
  if (const char* env = std::getenv("VICL_OUT_ROOT")) return env;
  return get_or<std::string>(cli.config, "out_root", "runs");
}

void write_manifest(const Cli& cli, const std::string& command, std::uint64_t seed,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  json m;
  m["command"] = command;
  char hash_buf[32];
  std::snprintf(hash_buf, sizeof(hash_buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(cli.config_bytes)));
  m["config_hash"] = std::string(hash_buf);
  m["seed"] = seed;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["tool_version"] = kToolVersion;
  long long ts = 0;
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) {
    ts = std::atoll(env);
  } else {
    ts = static_cast<long long>(std::time(nullptr));
  }
  m["timestamp"] = ts;
  write_text_file((fs::path(out_root(cli)) / ("manifest-" + command + ".json")).string(),
                  m.dump(1) + "\n");
}

std::uint64_t effective_seed(const Cli& cli, const json& sec, std::uint64_t fallback) {
  if (cli.seed_set) return cli.seed;
  return get_or<std::uint64_t>(sec, "seed", fallback);
}

SubjectParams subject_from_config(const json& cfg, const std::string& fallback_name) {
  json sub = section(cfg, "subject");
  if (sub.contains("a1")) {
    SubjectParams p;
    p.a1 = sub.at("a1").get<double>();
    p.a2 = sub.at("a2").get<double>();
    p.b1 = sub.at("b1").get<double>();
    p.b2 = sub.at("b2").get<double>();
    p.delta = get_or<double>(sub, "delta", 2.0);
    p.validate();
    return p;
  }
  return subject_table(get_or<std::string>(sub, "name", fallback_name));
}

sim::DemoOptions demo_options(const Cli& cli, sim::Scenario scenario) {
  json d = section(cli.config, "demos");
  sim::DemoOptions opt;
  opt.scenario = scenario;
  opt.count = get_or<int>(d, "count", 5);
  opt.seed = get_or<std::uint64_t>(d, "seed", 11);
  opt.subject = get_or<std::string>(d, "subject", "S5");
  opt.jitter = get_or<double>(d, "jitter", 0.025);
  return opt;
}

// Demo records are materialized next to the outputs so learn/train runs are
// reproducible and inspectable.
std::vector<DemonstrationRecord> load_or_synth_demos(const Cli& cli, sim::Scenario scenario,
                                                     std::vector<std::string>* paths_out) {
  json d = section(cli.config, "demos");
  std::vector<DemonstrationRecord> demos;
  if (d.contains("paths")) {
    for (const auto& p : d.at("paths")) {
      demos.push_back(load_record(p.get<std::string>()));
      if (paths_out) paths_out->push_back(p.get<std::string>());
    }
    return demos;
  }
  sim::DemoOptions opt = demo_options(cli, scenario);
  demos = sim::synth_demos(opt);
  fs::path dir = fs::path(out_root(cli)) / "demos" / sim::to_string(scenario);
  fs::create_directories(dir);
  for (std::size_t i = 0; i < demos.size(); ++i) {
    fs::path p = dir / ("demo_" + std::to_string(i) + ".txt");
    save_record(demos[i], p.string());
    if (paths_out) paths_out->push_back(p.string());
  }
  return demos;
}

sim::Scenario scenario_from(const Cli& cli, const json& sec) {
  std::string name = !cli.scenario.empty() ? cli.scenario
                                           : get_or<std::string>(sec, "scenario", "transport");
  return sim::scenario_from_string(name);
}

std::string schedule_path(const Cli& cli, sim::Scenario sc) {
  return (fs::path(out_root(cli)) / ("schedule_" + sim::to_string(sc) + ".json")).string();
}
std::string model_path(const Cli& cli, sim::Scenario sc) {
  return (fs::path(out_root(cli)) / ("model_" + sim::to_string(sc) + ".json")).string();
}
std::string checkpoint_path(const Cli& cli, sim::Scenario sc) {
  return (fs::path(out_root(cli)) / ("regnet_" + sim::to_string(sc) + ".json")).string();
}

// ---------------------------------------------------------------------------

int cmd_calibrate(const Cli& cli) {
  json sec = section(cli.config, "calibrate");
  std::uint64_t seed = effective_seed(cli, sec, 7);
  std::string subject_name = get_or<std::string>(sec, "subject", "S2");
  double force_noise = get_or<double>(sec, "force_noise", 0.0);
  SubjectParams truth = subject_table(subject_name);

  auto observations = sim::synth_calibration(truth, seed, force_noise);
  auto fit = stiffness::calibrate(observations, truth.delta);

  json report;
  report["format"] = "vicl-calibration";
  report["subject"] = subject_name;
  report["seed"] = seed;
  report["trials"] = observations.size();
  report["params"] = {{"a1", fit.params.a1},
                      {"a2", fit.params.a2},
                      {"b1", fit.params.b1},
                      {"b2", fit.params.b2},
                      {"delta", fit.params.delta}};
  report["truth"] = {{"a1", truth.a1}, {"a2", truth.a2}, {"b1", truth.b1}, {"b2", truth.b2}};
  report["residual"] = fit.residual;
  report["per_observation"] = fit.per_observation;

  fs::create_directories(out_root(cli));
  std::string out = (fs::path(out_root(cli)) / "calibration_report.json").string();
  write_text_file(out, report.dump(1) + "\n");
  write_manifest(cli, "calibrate", seed, {}, {out});

  std::cout << "calibrated " << subject_name << " over " << observations.size() << " trials\n";
  std::cout << "  a1 " << fit.params.a1 << " (truth " << truth.a1 << ")\n";
  std::cout << "  a2 " << fit.params.a2 << " (truth " << truth.a2 << ")\n";
  std::cout << "  b1 " << fit.params.b1 << " (truth " << truth.b1 << ")\n";
  std::cout << "  b2 " << fit.params.b2 << " (truth " << truth.b2 << ")\n";
  std::cout << "  residual " << fit.residual << "\n";
  std::cout << "report: " << out << "\n";
  return 0;
}

int cmd_learn(const Cli& cli) {
  json sec = section(cli.config, "learn");
  sim::Scenario scenario = scenario_from(cli, sec);
  std::vector<std::string> demo_paths;
  auto demos = load_or_synth_demos(cli, scenario, &demo_paths);

  pipeline::LearnOptions opt;
  opt.components = get_or<int>(sec, "components", 6);
  opt.regularization = get_or<double>(sec, "regularization", 1e-6);
  opt.seed = effective_seed(cli, sec, 3);
  opt.r_control = get_or<double>(sec, "r_control", 1e-4);
  opt.max_T = get_or<int>(sec, "max_T", 1001);
  opt.subject = get_or<std::string>(section(cli.config, "demos"), "subject", "S5");
  opt.delta = get_or<double>(sec, "delta", 2.0);
  opt.bic_sweep = get_or<bool>(sec, "bic_sweep", false);

  if (opt.components == 1) std::cout << "warning: single component (J=1)\n";
  pipeline::LearnResult result = pipeline::learn(demos, opt);

  fs::create_directories(out_root(cli));
  std::string mpath = model_path(cli, scenario);
  std::string spath = schedule_path(cli, scenario);
  tpgmm::save_model(result.model, mpath);
  save_schedule(result.schedule, spath);
  write_manifest(cli, "learn", opt.seed, demo_paths, {mpath, spath});

  const auto& ll = result.em_report.log_likelihood;
  std::cout << "em: " << ll.size() << " iterations, log-likelihood "
            << (ll.empty() ? 0.0 : ll.front()) << " -> " << (ll.empty() ? 0.0 : ll.back())
            << ", pruned " << result.em_report.pruned_components << "\n";
  std::cout << "lqt: kkt residual " << result.lqt_kkt << (result.lqt_ridged ? " (ridged)" : "")
            << "\n";
  std::cout << "passivity: " << (result.passivity.pass ? "PASS" : "FAIL") << " (min margin "
            << result.passivity.min_margin << " N/m/s)\n";
  if (!result.bic_table.empty()) {
    std::cout << "bic sweep:";
    for (auto& [j, b] : result.bic_table) std::cout << " J=" << j << ":" << b;
    std::cout << "\n";
  }
  std::cout << "model: " << mpath << "\nschedule: " << spath << "\n";
  return result.passivity.pass ? 0 : 3;
}

int cmd_train(const Cli& cli) {
  json sec = section(cli.config, "train");
  sim::Scenario scenario = scenario_from(cli, sec);
  std::vector<std::string> demo_paths;
  auto demos = load_or_synth_demos(cli, scenario, &demo_paths);

  regnet::TrainOptions opt;
  opt.hidden = get_or<int>(sec, "hidden", 24);
  opt.epochs = get_or<int>(sec, "epochs", 150);
  opt.chunk_len = get_or<int>(sec, "chunk_len", 64);
  opt.batch_size = get_or<int>(sec, "batch_size", 8);
  opt.learning_rate = get_or<double>(sec, "learning_rate", 8e-3);
  opt.clip_norm = get_or<double>(sec, "clip_norm", 5.0);
  opt.val_fraction = get_or<double>(sec, "val_fraction", 0.34);
  opt.seed = effective_seed(cli, sec, 5);

  auto dataset = pipeline::regnet_dataset(demos);
  regnet::TrainReport report;
  regnet::RegNetParams params = regnet::train(dataset, opt, &report);
  params.baseline_alpha = pipeline::baseline_alpha(demos);

  fs::create_directories(out_root(cli));
  std::string cpath = checkpoint_path(cli, scenario);
  regnet::save_params(params, cpath);

  // Loss curves.
  std::ostringstream curves;
  curves << "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < report.train_loss.size(); ++e) {
    curves << e << ',' << format_double(report.train_loss[e]) << ','
           << format_double(report.val_loss[e]) << "\n";
  }
  std::string curves_path = (fs::path(out_root(cli)) / "train_curves.csv").string();
  write_text_file(curves_path, curves.str());

  // Free-run metrics per demo (trained model on raw sequences).
  std::ostringstream mt;
  mt << "demo,rmse,correlation\n";
  double worst_corr = 1.0;
  for (std::size_t d = 0; d < dataset.size(); ++d) {
    auto pred = regnet::predict(params, dataset[d].inputs);
    std::vector<double> p, y;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      p.push_back(pred[i](0));
      y.push_back(dataset[d].targets[i](0));
    }
    auto m = regnet::metrics(p, y);
    worst_corr = std::min(worst_corr, m.correlation);
    mt << d << ',' << format_double(m.rmse) << ',' << format_double(m.correlation) << "\n";
  }
  std::string metrics_path = (fs::path(out_root(cli)) / "train_metrics.csv").string();
  write_text_file(metrics_path, mt.str());
  write_manifest(cli, "train", opt.seed, demo_paths, {cpath, curves_path, metrics_path});

  std::cout << "train loss " << report.train_loss.front() << " -> " << report.train_loss.back()
            << ", val " << report.val_loss.back() << "\n";
  std::cout << "worst per-demo correlation " << worst_corr << "\n";
  std::cout << "checkpoint: " << cpath << "\n";
  return 0;
}

int cmd_gradcheck() {
  // 2-unit net on a 5-step sequence against central differences.
  Rng rng(4242);
  regnet::RegNetParams params = regnet::init_params(3, 2, 1, rng);
  std::vector<VectorXd> xs, ys;
  for (int t = 0; t < 5; ++t) {
    VectorXd x(3);
    x << rng.uniform(), rng.uniform(), rng.uniform();
    xs.push_back(x);
    VectorXd y(1);
    y << rng.uniform();
    ys.push_back(y);
  }
  regnet::ForwardCache cache;
  regnet::forward(params, xs, &cache);
  VectorXd analytic = regnet::backward(params, cache, ys).flatten();

  const double eps = 1e-5;
  VectorXd theta = params.flatten();
  double max_rel = 0.0;
  for (int i = 0; i < theta.size(); ++i) {
    VectorXd tp = theta, tm = theta;
    tp(i) += eps;
    tm(i) -= eps;
    regnet::RegNetParams pp = params, pm = params;
    pp.unflatten(tp);
    pm.unflatten(tm);
    double lp = regnet::mse_loss(regnet::forward(pp, xs), ys);
    double lm = regnet::mse_loss(regnet::forward(pm, xs), ys);
    double numeric = (lp - lm) / (2.0 * eps);
    double rel = std::abs(numeric - analytic(i)) /
                 std::max(1e-8, std::abs(numeric) + std::abs(analytic(i)));
    max_rel = std::max(max_rel, rel);
  }
  std::cout << "gradcheck max relative error " << max_rel << "\n";
  if (!(max_rel < 1e-5)) {
    std::cerr << "gradcheck FAILED (tolerance 1e-5)\n";
    return 3;
  }
  return 0;
}

sim::ScenarioOptions scenario_options(const Cli& cli, const json& sec, sim::Scenario scenario,
                                      sim::Method method, std::uint64_t seed) {
  sim::ScenarioOptions opt;
  opt.scenario = scenario;
  opt.method = method;
  opt.seed = seed;
  std::string plant = !cli.plant.empty() ? cli.plant : get_or<std::string>(sec, "plant", "reduced");
  if (plant == "reduced") {
    opt.plant = sim::PlantVariant::Reduced;
  } else if (plant == "full") {
    opt.plant = sim::PlantVariant::Full;
  } else {
    throw ValidationError("unknown plant variant: " + plant + " (expected reduced|full)");
  }
  opt.sensor_noise = get_or<bool>(sec, "noise", true);
  opt.noise_force = get_or<double>(sec, "noise_force", 0.1);
  opt.noise_emg = get_or<double>(sec, "noise_emg", 0.02);
  opt.jitter = get_or<double>(sec, "jitter", 0.025);
  opt.rho_min = get_or<double>(sec, "rho_min", 0.5);
  opt.rho_max = get_or<double>(sec, "rho_max", 1.8);
  opt.sawing_force_target = get_or<double>(sec, "sawing_force_target", 10.0);
  return opt;
}

sim::Artifacts load_artifacts(const Cli& cli, sim::Scenario scenario, sim::Method method) {
  sim::Artifacts art;
  std::string spath = schedule_path(cli, scenario);
  if (!fs::exists(spath)) {
    throw ValidationError("missing schedule " + spath + "; run 'vicl learn --scenario " +
                          sim::to_string(scenario) + "' first");
  }
  art.schedule = load_schedule(spath);
  if (method == sim::Method::HiImprsl) {
    std::string cpath = checkpoint_path(cli, scenario);
    if (!fs::exists(cpath)) {
      throw ValidationError("missing regnet checkpoint " + cpath +
                            "; run 'vicl train --scenario " + sim::to_string(scenario) +
                            "' first");
    }
    art.regulation = regnet::load_params(cpath);
  }
  return art;
}

void write_run_outputs(const Cli& cli, const sim::ScenarioOptions& opt,
                       const sim::ScenarioResult& res, std::vector<std::string>* outputs) {
  fs::path dir = fs::path(out_root(cli)) / "results";
  fs::create_directories(dir);
  std::string tag =
      sim::to_string(opt.scenario) + "_" + sim::to_string(opt.method) + "_s" +
      std::to_string(opt.seed);

  // Tidy plot data: one row per sample.
  std::ostringstream plot;
  plot << "t,fx,fy,fz,rho\n";
  for (int i = 0; i < res.timebase.n; ++i) {
    plot << format_double(res.timebase.time(i)) << ',' << format_double(res.force[i](0)) << ','
         << format_double(res.force[i](1)) << ',' << format_double(res.force[i](2)) << ','
         << format_double(res.rho[i]) << "\n";
  }
  std::string plot_path = (dir / ("trace_" + tag + ".csv")).string();
  write_text_file(plot_path, plot.str());

  std::ostringstream row;
  row << "scenario,method,seed,axis,force_mean_n,smoothness_1e3_n_s2,failed\n";
  const char* axes = "XYZ";
  for (int a = 0; a < 3; ++a) {
    row << sim::to_string(opt.scenario) << ',' << sim::to_string(opt.method) << ',' << opt.seed
        << ',' << axes[a] << ',' << format_double(res.force_mean(a)) << ','
        << format_double(res.smoothness(a) / 1e-3) << ',' << (res.failed ? 1 : 0) << "\n";
  }
  std::string row_path = (dir / ("run_" + tag + ".csv")).string();
  write_text_file(row_path, row.str());
  if (outputs) {
    outputs->push_back(plot_path);
    outputs->push_back(row_path);
  }
}

int cmd_simulate(const Cli& cli) {
  json sec = section(cli.config, "simulate");
  sim::Scenario scenario = scenario_from(cli, sec);
  std::string method_name =
      !cli.method.empty() ? cli.method : get_or<std::string>(sec, "method", "fic");
  sim::Method method = sim::method_from_string(method_name);
  std::uint64_t seed = effective_seed(cli, sec, 1);

  sim::ScenarioOptions opt = scenario_options(cli, sec, scenario, method, seed);
  if (get_or<bool>(sec, "cycle_log", false)) {
    fs::create_directories(fs::path(out_root(cli)) / "results");
    opt.cycle_log_path = (fs::path(out_root(cli)) / "results" /
                          ("cycles_" + sim::to_string(scenario) + "_" + method_name + "_s" +
                           std::to_string(seed) + ".csv"))
                             .string();
  }
  sim::Artifacts art = load_artifacts(cli, scenario, method);

  if (method == sim::Method::Fic) {
    std::cout << "fic gains: K " << opt.fic_k << " N/m, D "
              << 2.0 * std::sqrt(opt.fic_k) << " N*s/m\n";
  }
  sim::ScenarioResult res = sim::run_scenario(opt, art);
  std::vector<std::string> outputs;
  write_run_outputs(cli, opt, res, &outputs);
  write_manifest(cli, "simulate", seed, {schedule_path(cli, scenario)}, outputs);

  std::cout << "scenario " << sim::to_string(scenario) << " method " << method_name << " seed "
            << seed << (res.failed ? " FAILED: " + res.note : "") << "\n";
  std::cout << "force mean [N]: " << res.force_mean.transpose() << "\n";
  std::cout << "smoothness [1e-3 N/s^2]: " << (res.smoothness / 1e-3).transpose() << "\n";
  std::cout << "torso coupling residual [N*m]: " << res.torso_coupling << "\n";
  return res.failed ? 3 : 0;
}

struct AggRow {
  sim::Method method;
  int axis;
  double mean_avg, mean_sd, smooth_avg, smooth_sd;
};

int cmd_evaluate(const Cli& cli) {
  json sec = section(cli.config, "evaluate");
  sim::Scenario scenario = scenario_from(cli, sec);

  std::vector<sim::Method> methods;
  if (!cli.method.empty()) {
    methods.push_back(sim::method_from_string(cli.method));
  } else if (sec.contains("methods")) {
    for (const auto& m : sec.at("methods")) {
      methods.push_back(sim::method_from_string(m.get<std::string>()));
    }
  } else {
    methods = {sim::Method::Fic, sim::Method::EmgVic, sim::Method::EkfVic, sim::Method::Ablation,
               sim::Method::HiImprsl};
  }
  std::vector<std::uint64_t> seeds;
  if (sec.contains("seeds")) {
    for (const auto& s : sec.at("seeds")) seeds.push_back(s.get<std::uint64_t>());
  } else {
    seeds = {1, 2, 3, 4, 5};
  }

  sim::Artifacts base_art = load_artifacts(cli, scenario, sim::Method::HiImprsl);

  struct Task {
    sim::Method method;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (auto m : methods) {
    for (auto s : seeds) tasks.push_back({m, s});
  }
  std::vector<sim::ScenarioResult> results(tasks.size());

  int jobs = std::max(1, cli.jobs);
  std::mutex io_mutex;
  std::vector<std::string> outputs;
  auto worker = [&](int worker_id) {
    for (std::size_t i = worker_id; i < tasks.size(); i += jobs) {
      sim::ScenarioOptions opt = scenario_options(cli, sec, scenario, tasks[i].method,
                                                  tasks[i].seed);
      results[i] = sim::run_scenario(opt, base_art);
      std::lock_guard<std::mutex> lock(io_mutex);
      write_run_outputs(cli, opt, results[i], &outputs);
      std::cout << "done " << sim::to_string(tasks[i].method) << " seed " << tasks[i].seed
                << (results[i].failed ? " FAILED" : "") << "\n";
    }
  };
  if (jobs == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < jobs; ++w) pool.emplace_back(worker, w);
    for (auto& th : pool) th.join();
  }

  // Aggregate in the fixed (method, axis) order.
  std::ostringstream agg;
  agg << "scenario,method,axis,force_mean_avg_n,force_mean_sd_n,"
         "smoothness_avg_1e3_n_s2,smoothness_sd_1e3_n_s2\n";
  std::vector<AggRow> rows;
  for (auto m : methods) {
    for (int a = 0; a < 3; ++a) {
      std::vector<double> means, smooths;
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (tasks[i].method != m || results[i].failed) continue;
        means.push_back(results[i].force_mean(a));
        smooths.push_back(results[i].smoothness(a) / 1e-3);
      }
      auto stats = [](const std::vector<double>& v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= std::max<std::size_t>(1, v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        var /= std::max<std::size_t>(1, v.size());
        return std::make_pair(mean, std::sqrt(var));
      };
      auto [ma, msd] = stats(means);
      auto [sa, ssd] = stats(smooths);
      rows.push_back({m, a, ma, msd, sa, ssd});
      const char* axes = "XYZ";
      agg << sim::to_string(scenario) << ',' << sim::to_string(m) << ',' << axes[a] << ','
          << format_double(ma) << ',' << format_double(msd) << ',' << format_double(sa) << ','
          << format_double(ssd) << "\n";
    }
  }
  fs::path agg_path = fs::path(out_root(cli)) / "results" /
                      ("aggregate_" + sim::to_string(scenario) + ".csv");
  write_text_file(agg_path.string(), agg.str());
  outputs.push_back(agg_path.string());
  write_manifest(cli, "evaluate", seeds.empty() ? 0 : seeds[0], {}, outputs);
  std::cout << "aggregate: " << agg_path.string() << " (" << rows.size() << " rows)\n";

  // Trend lines against the paper-style ordering.
  auto row_of = [&](sim::Method m, int axis) -> const AggRow* {
    for (const auto& r : rows) {
      if (r.method == m && r.axis == axis) return &r;
    }
    return nullptr;
  };
  if (get_or<bool>(sec, "check_trends", false)) {
    bool ok = true;
    for (int a = 0; a < 2; ++a) {  // X and Y
      const AggRow* hi = row_of(sim::Method::HiImprsl, a);
      const AggRow* fic = row_of(sim::Method::Fic, a);
      const AggRow* abl = row_of(sim::Method::Ablation, a);
      if (hi && fic && abl) {
        bool line = hi->mean_avg <= fic->mean_avg && hi->mean_avg <= abl->mean_avg;
        std::cout << "trend axis " << "XY"[a] << ": hi-imprsl " << hi->mean_avg << " vs fic "
                  << fic->mean_avg << " vs ablation " << abl->mean_avg
                  << (line ? " OK" : " VIOLATION") << "\n";
        ok = ok && line;
      }
    }
    return ok ? 0 : 3;
  }
  return 0;
}

int cmd_report(const Cli& cli) {
  // Re-aggregate existing per-run rows.
  fs::path dir = fs::path(out_root(cli)) / "results";
  if (!fs::exists(dir)) throw ValidationError("no results directory under " + out_root(cli));
  std::map<std::string, std::vector<std::pair<double, double>>> cells;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().filename().string().rfind("run_", 0) == 0) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::istringstream in(read_text_file(f.string()));
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      std::istringstream row(line);
      std::string scenario, method, seed, axis, fm, sm, failed;
      std::getline(row, scenario, ',');
      std::getline(row, method, ',');
      std::getline(row, seed, ',');
      std::getline(row, axis, ',');
      std::getline(row, fm, ',');
      std::getline(row, sm, ',');
      std::getline(row, failed, ',');
      if (failed == "1") continue;
      cells[scenario + "," + method + "," + axis].emplace_back(std::stod(fm), std::stod(sm));
    }
  }
  std::cout << "scenario,method,axis,force_mean_avg_n,force_mean_sd_n,"
               "smoothness_avg_1e3_n_s2,smoothness_sd_1e3_n_s2\n";
  for (const auto& [key, vals] : cells) {
    double m1 = 0, m2 = 0;
    for (auto& [a, b] : vals) {
      m1 += a;
      m2 += b;
    }
    m1 /= vals.size();
    m2 /= vals.size();
    double v1 = 0, v2 = 0;
    for (auto& [a, b] : vals) {
      v1 += (a - m1) * (a - m1);
      v2 += (b - m2) * (b - m2);
    }
    std::cout << key << ',' << format_double(m1) << ',' << format_double(std::sqrt(v1 / vals.size()))
              << ',' << format_double(m2) << ',' << format_double(std::sqrt(v2 / vals.size()))
              << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"variable impedance collaboration skill pipeline"};
  app.require_subcommand(1);

  Cli cli;
  app.add_option("--config", cli.config_path, "layered JSON config file");
  app.add_option("--out", cli.out_dir, "output root (overrides config/out_root)");
  app.add_option("--jobs", cli.jobs, "parallel workers for evaluate");
  auto* seed_opt = app.add_option("--seed", cli.seed, "seed override");
  app.add_option("--method", cli.method, "method override (fic|emg-vic|ekf-vic|ablation|hi-imprsl)");
  app.add_option("--scenario", cli.scenario,
                 "scenario override (transport|taichi-uni|taichi-bi|sawing)");
  app.add_option("--plant", cli.plant, "plant variant (reduced|full)");

  auto* c_cal = app.add_subcommand("calibrate", "fit subject stiffness parameters");
  auto* c_learn = app.add_subcommand("learn", "fit the motion/impedance model and schedule");
  auto* c_train = app.add_subcommand("train", "train the impedance regulation network");
  auto* c_sim = app.add_subcommand("simulate", "run one scenario instance");
  auto* c_eval = app.add_subcommand("evaluate", "run the method x seed grid and aggregate");
  auto* c_grad = app.add_subcommand("gradcheck", "verify BPTT gradients against finite differences");
  auto* c_report = app.add_subcommand("report", "re-aggregate per-run result rows");

  CLI11_PARSE(app, argc, argv);
  cli.seed_set = seed_opt->count() > 0;

  try {
    if (!cli.config_path.empty()) {
      cli.config_bytes = read_text_file(cli.config_path);
      try {
        cli.config = json::parse(cli.config_bytes);
      } catch (const json::exception& e) {
        throw ValidationError(std::string("config parse: ") + e.what());
      }
    }
    fs::create_directories(out_root(cli));

    if (c_cal->parsed()) return cmd_calibrate(cli);
    if (c_learn->parsed()) return cmd_learn(cli);
    if (c_train->parsed()) return cmd_train(cli);
    if (c_sim->parsed()) return cmd_simulate(cli);
    if (c_eval->parsed()) return cmd_evaluate(cli);
    if (c_grad->parsed()) return cmd_gradcheck();
    if (c_report->parsed()) return cmd_report(cli);
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
