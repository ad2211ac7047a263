// stquant: simulate, train, predict, forecast and evaluate spatio-temporal
// quantile models on the canonical s1,s2,t,z CSV schema.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "stq/convlstm.hpp"
#include "stq/dataset.hpp"
#include "stq/evaluation.hpp"
#include "stq/forecaster_io.hpp"
#include "stq/interpolator.hpp"
#include "stq/lstm.hpp"
#include "stq/simulator.hpp"

namespace fs = std::filesystem;

namespace {

// Relative paths resolve against STQUANT_DATA_DIR when it is set.
std::string resolve_path(const std::string& p) {
    if (p.empty() || fs::path(p).is_absolute()) return p;
    if (const char* base = std::getenv("STQUANT_DATA_DIR")) return (fs::path(base) / p).string();
    return p;
}

std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(std::stod(cell));
    return out;
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(std::stoi(cell));
    return out;
}

void write_manifest(const std::string& artifact_path, const std::string& command,
                    const nlohmann::json& config) {
    nlohmann::json m;
    m["command"] = command;
    m["config"] = config;
    const fs::path p(artifact_path);
    const fs::path out = fs::is_directory(p) ? p / "run_manifest.json"
                                             : p.parent_path() / (p.filename().string() +
                                                                  ".manifest.json");
    std::ofstream f(out);
    f << m.dump(2) << '\n';
}

struct QueryPoint {
    double s1, s2, t;
};

std::vector<QueryPoint> read_query_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open query file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty query file: " + path);
    std::vector<QueryPoint> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string cell;
        std::vector<double> vals;
        while (std::getline(ls, cell, ',')) vals.push_back(std::stod(cell));
        if (vals.size() < 3)
            throw std::runtime_error("query row " + std::to_string(line_no) +
                                     ": need at least s1,s2,t");
        out.push_back({vals[0], vals[1], vals[2]});
    }
    return out;
}

// run fn(i) for i in [0, n) across up to `jobs` threads
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mx;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mx);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

int cmd_simulate(const std::string& spec_path, const std::string& out_path,
                 std::uint64_t seed_override, bool has_seed) {
    stq::SimulationSpec spec;
    if (!spec_path.empty()) {
        std::ifstream in(spec_path);
        if (!in) throw std::runtime_error("cannot open spec: " + spec_path);
        spec = stq::spec_from_json(nlohmann::json::parse(in));
    }
    if (has_seed) spec.seed = seed_override;
    spec.validate();

    auto ds = stq::simulate(spec);
    stq::csv::write_dataset(ds, out_path);
    {
        std::ofstream sf(out_path + ".spec.json");
        sf << stq::spec_to_json(spec).dump(2) << '\n';
    }
    write_manifest(out_path, "simulate", stq::spec_to_json(spec));
    std::cout << "wrote " << ds.size() << " rows to " << out_path << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spatio-temporal quantile interpolation and forecasting"};
    app.require_subcommand(1);

    // --- simulate ---
    auto* sim = app.add_subcommand("simulate", "sample a space-time Gaussian field to CSV");
    std::string sim_spec, sim_out = "data.csv";
    std::uint64_t sim_seed = 0;
    sim->add_option("--spec", sim_spec, "simulation spec JSON");
    sim->add_option("--out", sim_out, "output dataset CSV")->required();
    auto* sim_seed_opt = sim->add_option("--seed", sim_seed, "override the spec seed");

    // --- train-interp ---
    auto* ti = app.add_subcommand("train-interp", "train the interpolation model");
    std::string ti_data, ti_out, ti_spatial = "25,81,144", ti_temporal = "10,15,45";
    std::string ti_layers = "100,100,100,100,100,100,100,100,50,50,50,50,1";
    std::string ti_taus = "0.05,0.5,0.95", ti_l1l2 = "0,1";
    double ti_lr = 1e-3, ti_l1 = 0.0, ti_l2 = 0.0, ti_lambda = 0.0;
    int ti_epochs = 200, ti_batch = 32;
    std::uint64_t ti_seed = 0;
    bool ti_mse = false;
    ti->add_option("--data", ti_data, "training dataset CSV")->required();
    ti->add_option("--out", ti_out, "model output directory")->required();
    ti->add_option("--spatial", ti_spatial, "spatial anchor counts per resolution");
    ti->add_option("--temporal", ti_temporal, "temporal anchor counts per resolution");
    ti->add_option("--layers", ti_layers, "dense layer sizes, last must be 1");
    ti->add_option("--tau", ti_taus, "quantile levels, must include 0.5");
    ti->add_option("--lr", ti_lr, "learning rate");
    ti->add_option("--epochs", ti_epochs, "max training epochs");
    ti->add_option("--batch", ti_batch, "minibatch size");
    ti->add_option("--l1", ti_l1, "L1 penalty");
    ti->add_option("--l2", ti_l2, "L2 penalty");
    ti->add_option("--l1l2-layers", ti_l1l2, "layer indices the penalties apply to");
    ti->add_option("--lambda", ti_lambda, "psi band width (default: data range / 2)");
    ti->add_option("--seed", ti_seed, "training seed");
    ti->add_flag("--mse-head", ti_mse, "train the point head with squared loss");

    // --- predict ---
    auto* pr = app.add_subcommand("predict", "predict at query points");
    std::string pr_model, pr_query, pr_out, pr_taus = "0.05,0.5,0.95";
    pr->add_option("--model", pr_model, "model directory")->required();
    pr->add_option("--query", pr_query, "query CSV with s1,s2,t columns")->required();
    pr->add_option("--out", pr_out, "predictions CSV")->required();
    pr->add_option("--tau", pr_taus, "quantile levels to emit");

    // --- train-forecast ---
    auto* tf = app.add_subcommand("train-forecast", "train per-location forecasters");
    std::string tf_model, tf_data, tf_out, tf_variant = "lstm", tf_taus = "0.05,0.5,0.95";
    std::string tf_locations, tf_dump_frames;
    int tf_hidden = 50, tf_layers = 1, tf_window = 12, tf_epochs = 150, tf_batch = 16;
    int tf_r = 5, tf_filters = 16, tf_jobs = 1;
    double tf_lr = 0.01, tf_delta = 0.0;
    std::uint64_t tf_seed = 0;
    tf->add_option("--model", tf_model, "trained interpolation model directory")->required();
    tf->add_option("--data", tf_data, "dataset CSV (times and default locations)")->required();
    tf->add_option("--out", tf_out, "forecaster output directory")->required();
    tf->add_option("--variant", tf_variant, "lstm or convlstm");
    tf->add_option("--locations", tf_locations, "CSV of target locations (default: stations)");
    tf->add_option("--tau", tf_taus, "quantile levels, must include 0.5");
    tf->add_option("--hidden", tf_hidden, "hidden units per recurrent layer");
    tf->add_option("--layers", tf_layers, "stacked recurrent layers");
    tf->add_option("--window", tf_window, "input window length");
    tf->add_option("--epochs", tf_epochs, "training epochs");
    tf->add_option("--batch", tf_batch, "minibatch size");
    tf->add_option("--lr", tf_lr, "learning rate");
    tf->add_option("--r", tf_r, "neighborhood size (convlstm)");
    tf->add_option("--filters", tf_filters, "feature maps per gate (convlstm)");
    tf->add_option("--delta", tf_delta,
                   "lattice spacing (convlstm; default median nearest-station distance)");
    tf->add_option("--dump-frames", tf_dump_frames, "directory for per-time-slice frame CSVs");
    tf->add_option("--jobs", tf_jobs, "parallel per-location training jobs");
    tf->add_option("--seed", tf_seed, "training seed");

    // --- forecast ---
    auto* fc = app.add_subcommand("forecast", "multi-step forecasts from trained forecasters");
    std::string fc_model, fc_out;
    int fc_horizon = 5;
    fc->add_option("--model", fc_model, "forecaster directory")->required();
    fc->add_option("--out", fc_out, "forecast CSV")->required();
    fc->add_option("--horizon", fc_horizon, "forecast steps");

    // --- evaluate ---
    auto* ev = app.add_subcommand("evaluate", "score predictions against truth");
    std::string ev_pred, ev_truth, ev_out = "report.json";
    double ev_alpha = 0.1;
    ev->add_option("--pred", ev_pred, "predictions CSV (s1,s2,t,tau,value)")->required();
    ev->add_option("--truth", ev_truth, "truth dataset CSV")->required();
    ev->add_option("--out", ev_out, "report JSON path (a .csv twin is written too)");
    ev->add_option("--alpha", ev_alpha, "interval level for MPIW/COV");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed())
            return cmd_simulate(resolve_path(sim_spec), resolve_path(sim_out), sim_seed,
                                !sim_seed_opt->empty());

        if (ti->parsed()) {
            auto ds = stq::csv::read_dataset(resolve_path(ti_data));
            stq::InterpolatorConfig cfg;
            cfg.spatial_counts = parse_int_list(ti_spatial);
            cfg.temporal_counts = parse_int_list(ti_temporal);
            cfg.layer_sizes = parse_int_list(ti_layers);
            cfg.taus = parse_double_list(ti_taus);
            cfg.train.learning_rate = ti_lr;
            cfg.train.epochs = ti_epochs;
            cfg.train.batch_size = ti_batch;
            cfg.train.l1 = ti_l1;
            cfg.train.l2 = ti_l2;
            for (int l : parse_int_list(ti_l1l2)) cfg.train.l1l2_layers.insert(l);
            cfg.train.seed = ti_seed;
            cfg.lambda_override = ti_lambda;
            cfg.mse_point_head = ti_mse;

            auto model = stq::fit_interpolator(ds, cfg);
            for (const auto& w : model.warnings) std::cerr << "warning: " << w << '\n';
            const std::string out = resolve_path(ti_out);
            stq::save_interpolator(model, out);
            nlohmann::json rc{{"data", ti_data},       {"spatial", ti_spatial},
                              {"temporal", ti_temporal}, {"layers", ti_layers},
                              {"tau", ti_taus},        {"lr", ti_lr},
                              {"epochs", ti_epochs},   {"batch", ti_batch},
                              {"l1", ti_l1},           {"l2", ti_l2},
                              {"l1l2_layers", ti_l1l2}, {"lambda", model.lambda},
                              {"seed", ti_seed},       {"mse_head", ti_mse}};
            write_manifest(out, "train-interp", rc);
            std::cout << "model written to " << out << '\n';
            return 0;
        }

        if (pr->parsed()) {
            auto model = stq::load_interpolator(resolve_path(pr_model));
            auto queries = read_query_csv(resolve_path(pr_query));
            auto taus = parse_double_list(pr_taus);
            const std::string out = resolve_path(pr_out);
            std::ofstream f(out);
            if (!f) throw std::runtime_error("cannot write " + out);
            f.precision(17);
            f << "s1,s2,t,tau,value\n";
            bool warned = false;
            for (const auto& q : queries) {
                if (!warned) {
                    if (auto w = model.embedding.extrapolation_warning(q.s1, q.s2, q.t)) {
                        std::cerr << "warning: " << *w << '\n';
                        warned = true;
                    }
                }
                for (double tau : taus)
                    f << q.s1 << ',' << q.s2 << ',' << q.t << ',' << tau << ','
                      << stq::predict(model, q.s1, q.s2, q.t, tau) << '\n';
            }
            write_manifest(out, "predict",
                           {{"model", pr_model}, {"query", pr_query}, {"tau", pr_taus}});
            std::cout << "wrote " << queries.size() * taus.size() << " predictions to " << out
                      << '\n';
            return 0;
        }

        if (tf->parsed()) {
            if (tf_variant != "lstm" && tf_variant != "convlstm")
                throw std::runtime_error("--variant must be lstm or convlstm");
            auto interp = stq::load_interpolator(resolve_path(tf_model));
            auto ds = stq::csv::read_dataset(resolve_path(tf_data));
            auto times = ds.distinct_times();

            std::vector<std::pair<double, double>> locations;
            if (!tf_locations.empty()) {
                for (const auto& q : read_query_csv(resolve_path(tf_locations)))
                    locations.emplace_back(q.s1, q.s2);
            } else {
                locations = ds.stations();
            }

            const std::string out = resolve_path(tf_out);
            fs::create_directories(out);
            auto taus = parse_double_list(tf_taus);

            double delta = tf_delta;
            if (tf_variant == "convlstm" && delta <= 0.0)
                delta = stq::median_nearest_station_distance(ds);

            std::vector<nlohmann::json> entries(locations.size());
            parallel_for(locations.size(), tf_jobs, [&](std::size_t i) {
                const auto& [x, y] = locations[i];
                nlohmann::json entry;
                entry["location_id"] = i;
                entry["s1"] = x;
                entry["s2"] = y;
                if (tf_variant == "lstm") {
                    auto series = stq::interpolate_series(interp, x, y, times);
                    stq::QlstmConfig cfg;
                    cfg.layers = tf_layers;
                    cfg.hidden = tf_hidden;
                    cfg.window = tf_window;
                    cfg.taus = taus;
                    cfg.learning_rate = tf_lr;
                    cfg.epochs = tf_epochs;
                    cfg.batch_size = tf_batch;
                    cfg.seed = tf_seed + i;
                    auto model = stq::fit_qlstm(series, cfg);
                    entry["model"] = stq::qlstm_to_json(model);
                    entry["series"] = series;
                } else {
                    auto neigh = stq::grid_neighborhood(interp, x, y, times, tf_r, delta);
                    for (const auto& w : neigh.warnings)
                        std::cerr << "warning: " << w << '\n';
                    if (!tf_dump_frames.empty() && i == 0) {
                        fs::create_directories(tf_dump_frames);
                        for (std::size_t k = 0; k < neigh.frames.size(); ++k) {
                            std::ofstream ff(fs::path(tf_dump_frames) /
                                             ("frame_" + std::to_string(k) + ".csv"));
                            ff.precision(17);
                            const auto& m = neigh.frames[k];
                            for (Eigen::Index r = 0; r < m.rows(); ++r) {
                                for (Eigen::Index c = 0; c < m.cols(); ++c)
                                    ff << m(r, c) << (c + 1 < m.cols() ? "," : "");
                                ff << '\n';
                            }
                        }
                    }
                    stq::QconvlstmConfig cfg;
                    cfg.layers = tf_layers;
                    cfg.filters = static_cast<std::size_t>(tf_filters);
                    cfg.window = tf_window;
                    cfg.taus = taus;
                    cfg.learning_rate = tf_lr;
                    cfg.epochs = tf_epochs;
                    cfg.batch_size = tf_batch;
                    cfg.seed = tf_seed + i;
                    auto model = stq::fit_qconvlstm(neigh, cfg);
                    entry["model"] = stq::qconvlstm_to_json(model);
                    nlohmann::json frames = nlohmann::json::array();
                    for (const auto& fr : neigh.frames) frames.push_back(stq::matrix_to_json(fr));
                    entry["frames"] = frames;
                }
                entries[i] = std::move(entry);
            });

            nlohmann::json bundle;
            bundle["format_version"] = 1;
            bundle["variant"] = tf_variant;
            bundle["locations"] = entries;
            std::ofstream bf(fs::path(out) / "forecasters.json");
            bf << bundle.dump() << '\n';
            nlohmann::json rc{{"variant", tf_variant}, {"window", tf_window},
                              {"hidden", tf_hidden},   {"layers", tf_layers},
                              {"epochs", tf_epochs},   {"lr", tf_lr},
                              {"tau", tf_taus},        {"seed", tf_seed},
                              {"r", tf_r},             {"filters", tf_filters},
                              {"delta", delta},        {"jobs", tf_jobs}};
            write_manifest(out, "train-forecast", rc);
            std::cout << "trained " << locations.size() << " forecasters into " << out << '\n';
            return 0;
        }

        if (fc->parsed()) {
            const std::string dir = resolve_path(fc_model);
            std::ifstream bf(fs::path(dir) / "forecasters.json");
            if (!bf) throw std::runtime_error("forecaster bundle not found in " + dir);
            const auto bundle = nlohmann::json::parse(bf);
            const std::string variant = bundle.at("variant").get<std::string>();

            const std::string out = resolve_path(fc_out);
            std::ofstream f(out);
            if (!f) throw std::runtime_error("cannot write " + out);
            f.precision(17);
            f << "location_id,horizon,tau,value\n";
            for (const auto& entry : bundle.at("locations")) {
                const auto id = entry.at("location_id").get<std::size_t>();
                std::map<double, std::vector<double>> result;
                if (variant == "lstm") {
                    auto model = stq::qlstm_from_json(entry.at("model"));
                    auto series = entry.at("series").get<std::vector<double>>();
                    result = stq::forecast(model, series, fc_horizon);
                } else {
                    auto model = stq::qconvlstm_from_json(entry.at("model"));
                    stq::NeighborhoodSeries neigh;
                    for (const auto& fj : entry.at("frames"))
                        neigh.frames.push_back(stq::matrix_from_json(fj));
                    result = stq::forecast_conv(model, neigh, fc_horizon);
                }
                for (const auto& [tau, values] : result)
                    for (std::size_t h = 0; h < values.size(); ++h)
                        f << id << ',' << (h + 1) << ',' << tau << ',' << values[h] << '\n';
            }
            write_manifest(out, "forecast", {{"model", fc_model}, {"horizon", fc_horizon}});
            std::cout << "forecasts written to " << out << '\n';
            return 0;
        }

        if (ev->parsed()) {
            auto truth = stq::csv::read_dataset(resolve_path(ev_truth));
            std::map<std::string, double> truth_by_key;
            auto key = [](double s1, double s2, double t) {
                std::ostringstream os;
                os.precision(17);
                os << s1 << '|' << s2 << '|' << t;
                return os.str();
            };
            for (const auto& r : truth.rows()) truth_by_key[key(r.s1, r.s2, r.t)] = r.z;

            std::ifstream pf(resolve_path(ev_pred));
            if (!pf) throw std::runtime_error("cannot open predictions: " + ev_pred);
            std::string line;
            std::getline(pf, line);  // header
            std::map<std::string, std::map<double, double>> preds;  // key -> tau -> value
            std::size_t line_no = 1;
            while (std::getline(pf, line)) {
                ++line_no;
                if (line.empty()) continue;
                std::stringstream ls(line);
                std::string cell;
                std::vector<double> vals;
                while (std::getline(ls, cell, ',')) vals.push_back(std::stod(cell));
                if (vals.size() != 5)
                    throw std::runtime_error("prediction row " + std::to_string(line_no) +
                                             ": expected s1,s2,t,tau,value");
                preds[key(vals[0], vals[1], vals[2])][vals[3]] = vals[4];
            }

            const double lo_tau = ev_alpha / 2.0, hi_tau = 1.0 - ev_alpha / 2.0;
            std::vector<double> med, lo, hi, z;
            bool have_band = true;
            for (const auto& [k, by_tau] : preds) {
                auto it = truth_by_key.find(k);
                if (it == truth_by_key.end())
                    throw std::runtime_error("prediction point " + k + " missing from truth");
                auto mit = by_tau.find(0.5);
                if (mit == by_tau.end())
                    throw std::runtime_error("no tau=0.5 prediction for " + k);
                med.push_back(mit->second);
                z.push_back(it->second);
                auto lit = by_tau.find(lo_tau);
                auto hit = by_tau.find(hi_tau);
                if (lit == by_tau.end() || hit == by_tau.end()) {
                    have_band = false;
                } else {
                    lo.push_back(lit->second);
                    hi.push_back(hit->second);
                }
            }

            stq::EvalReport report;
            std::tie(report.mspe, report.mspe_se) = stq::mspe(med, z);
            report.n_test = med.size();
            if (have_band && !lo.empty()) {
                std::tie(report.mpiw, report.coverage) = stq::mpiw_cov(lo, hi, z);
                std::vector<double> widths(lo.size());
                for (std::size_t i = 0; i < lo.size(); ++i) widths[i] = hi[i] - lo[i];
                double mw = report.mpiw, ss = 0.0;
                for (double w : widths) ss += (w - mw) * (w - mw);
                report.mpiw_se = widths.size() > 1
                                     ? std::sqrt(ss / (widths.size() - 1.0)) /
                                           std::sqrt(static_cast<double>(widths.size()))
                                     : 0.0;
            }

            const std::string out = resolve_path(ev_out);
            std::ofstream jf(out);
            jf << stq::report_to_json(report).dump(2) << '\n';
            stq::report_to_csv(report, out + ".csv");
            write_manifest(out, "evaluate",
                           {{"pred", ev_pred}, {"truth", ev_truth}, {"alpha", ev_alpha}});
            std::cout << "mspe=" << report.mspe << " coverage=" << report.coverage
                      << " mpiw=" << report.mpiw << '\n';
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
