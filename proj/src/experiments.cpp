#include "lab/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "lab/bms.hpp"
#include "lab/capacity.hpp"
#include "lab/causal.hpp"
#include "lab/errors.hpp"
#include "lab/flow.hpp"
#include "lab/format.hpp"
#include "lab/kernel_td.hpp"
#include "lab/mdp.hpp"
#include "lab/spectral.hpp"

namespace lab {

namespace {

using json = nlohmann::json;
constexpr double inf = std::numeric_limits<double>::infinity();

param_spec real_param(std::string key, std::string def, std::string help, double lo = -inf, double hi = inf) {
    return {std::move(key), param_type::real, std::move(def), std::move(help), lo, hi};
}
param_spec int_param(std::string key, std::string def, std::string help, double lo = -inf, double hi = inf) {
    return {std::move(key), param_type::integer, std::move(def), std::move(help), lo, hi};
}
param_spec list_param(std::string key, std::string def, std::string help, double lo = -inf, double hi = inf) {
    return {std::move(key), param_type::real_list, std::move(def), std::move(help), lo, hi};
}
param_spec text_param(std::string key, std::string def, std::string help) {
    return {std::move(key), param_type::text, std::move(def), std::move(help)};
}

int as_int(const resolved_config& c, const std::string& key) { return static_cast<int>(c.integer(key)); }

std::vector<int> as_ints(const std::vector<double>& v) {
    std::vector<int> out;
    for (double d : v) {
        if (d != std::floor(d)) throw config_error("expected integer entries, got " + format_real(d));
        out.push_back(static_cast<int>(d));
    }
    return out;
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<std::string> indexed(const std::string& prefix, Eigen::Index n) {
    std::vector<std::string> h;
    for (Eigen::Index i = 0; i < n; ++i) h.push_back(prefix + std::to_string(i));
    return h;
}

// Trajectory CSV: t, then the named columns.
std::string trajectory_csv(const std::vector<double>& times, const std::vector<std::string>& names,
                           const std::vector<std::vector<double>>& columns) {
    std::vector<std::string> header{"t"};
    header.insert(header.end(), names.begin(), names.end());
    csv_table tab(header);
    for (std::size_t i = 0; i < times.size(); ++i) {
        tab.row().add(times[i]);
        for (const auto& c : columns) tab.add(c[i]);
    }
    return tab.str();
}

json config_json(const experiment_context& ctx) {
    json c = json::object();
    for (const auto& [k, v] : ctx.config.entries()) c[k] = v;
    return c;
}

std::string sidecar(const experiment_context& ctx, const std::string& experiment, const std::vector<std::string>& names,
                    const json& info) {
    json j{{"experiment", experiment},
           {"seed", ctx.seed},
           {"repetition", ctx.rep},
           {"config", config_json(ctx)},
           {"columns", names},
           {"info", info}};
    return j.dump(2) + "\n";
}

json info_json(const flow_trajectory& tr) {
    json j = json::object();
    for (const auto& [k, v] : tr.info) j[k] = v;
    return j;
}

// One vector per column; the header carries the eigen/singular values.
// Eigenvalues as (index, eigenvalue) rows and basis vectors as
// (state, ebf_0, ...) rows, under `<stem>_eigenvalues.csv` / `<stem>_ebfs.csv`.
void add_basis_files(experiment_result& res, const std::string& stem, const Eigen::MatrixXd& vectors,
                     const Eigen::VectorXd& values) {
    csv_table ev({"index", "eigenvalue"});
    for (Eigen::Index i = 0; i < values.size(); ++i) ev.row().add(static_cast<int>(i)).add(values(i));
    std::vector<std::string> header{"state"};
    for (Eigen::Index k = 0; k < vectors.cols(); ++k) header.push_back("ebf_" + std::to_string(k));
    csv_table vec(header);
    for (Eigen::Index s = 0; s < vectors.rows(); ++s) {
        auto& row = vec.row().add(static_cast<int>(s));
        for (Eigen::Index k = 0; k < vectors.cols(); ++k) row.add(vectors(s, k));
    }
    res.files.emplace_back(stem + "_eigenvalues.csv", ev.str());
    res.files.emplace_back(stem + "_ebfs.csv", vec.str());
}

Eigen::MatrixXd select_columns(const Eigen::MatrixXd& M, Eigen::Index first, Eigen::Index count) {
    return M.middleCols(first, count);
}

flow_config read_flow_config(const resolved_config& c, integrator method) {
    flow_config f;
    f.gamma = c.real("gamma");
    f.t_end = c.real("t_end");
    f.n_snapshots = as_int(c, "n_snapshots");
    f.method = method;
    return f;
}

void add_rank_row(csv_table& tab, const std::string& label, const std::string& lengthscale, const rank_report& r,
                  double eps) {
    tab.row().add(label).add(lengthscale).add(r.n).add(r.d).add(eps).add(r.rank);
    const Eigen::Index k = std::min<Eigen::Index>(64, r.singular_values.size());
    for (Eigen::Index i = 0; i < 64; ++i) {
        if (i < k)
            tab.add(r.singular_values(i));
        else
            tab.add_empty();
    }
}

std::vector<std::string> rank_header() {
    std::vector<std::string> h{"features", "lengthscale", "n", "d", "eps", "rank"};
    for (int i = 1; i <= 64; ++i) h.push_back("sigma_" + std::to_string(i));
    return h;
}

// ---------------------------------------------------------------- two-state

experiment_result run_two_state(const experiment_context& ctx) {
    const auto& c = ctx.config;
    const auto t = c.real_list("transition");
    const auto r = c.real_list("reward");
    const auto v0 = c.real_list("v0");
    if (t.size() != 4 || r.size() != 2 || v0.size() != 2)
        throw config_error("[two-state] transition needs 4 entries, reward and v0 need 2");
    tabular_mdp mdp;
    mdp.n_states = 2;
    mdp.n_actions = 1;
    Eigen::MatrixXd P(2, 2);
    P << t[0], t[1], t[2], t[3];
    mdp.transition.push_back(P);
    mdp.reward = to_vector(r);
    mdp.validate();

    flow_config cfg = read_flow_config(c, integrator::closed_form);
    const Eigen::VectorXd V0 = to_vector(v0);
    const int nstep = as_int(c, "nstep");
    const double lambda = c.real("lambda");
    const std::vector<std::pair<std::string, flow_trajectory>> flows{
        {"td", td_value_flow(V0, P, mdp.reward, cfg)},
        {"mc", mc_value_flow(V0, P, mdp.reward, cfg)},
        {"nstep", nstep_value_flow(V0, P, mdp.reward, nstep, cfg)},
        {"tdlambda", td_lambda_value_flow(V0, P, mdp.reward, lambda, cfg)}};
    std::vector<std::string> names;
    std::vector<std::vector<double>> cols;
    json info = json::object();
    for (const auto& [label, tr] : flows) {
        for (int s = 0; s < 2; ++s) {
            names.push_back(label + "_v" + std::to_string(s));
            std::vector<double> col;
            for (const auto& S : tr.states) col.push_back(S(s, 0));
            cols.push_back(col);
        }
        info[label] = info_json(tr);
    }
    const auto& times = flows.front().second.times;
    const Eigen::VectorXd Vpi = exact_value(P, mdp.reward, cfg.gamma);
    csv_table fp({"state", "v_pi"});
    for (int s = 0; s < 2; ++s) fp.row().add(s).add(Vpi(s));
    auto sp = eigendecompose(P);

    experiment_result res;
    res.files.emplace_back("trajectory.csv", trajectory_csv(times, names, cols));
    res.files.emplace_back("trajectory.json", sidecar(ctx, "two-state", names, info));
    res.files.emplace_back("fixed_point.csv", fp.str());
    add_basis_files(res, "spectrum", sp.real_vectors(), sp.real_values());
    res.files.emplace_back("mdp.json", mdp_to_json(mdp).dump(2) + "\n");
    res.derived["integrator"] = "closed_form";
    res.derived["flows"] = info;
    return res;
}

// ----------------------------------------------------------- chain-transfer

std::string heatmap_csv(const Eigen::MatrixXd& D) {
    std::vector<std::string> header{"source"};
    for (Eigen::Index j = 0; j < D.cols(); ++j) header.push_back("target_" + std::to_string(j));
    csv_table tab(header);
    for (Eigen::Index i = 0; i < D.rows(); ++i) {
        tab.row().add(static_cast<long>(i));
        for (Eigen::Index j = 0; j < D.cols(); ++j) tab.add(D(i, j));
    }
    return tab.str();
}

experiment_result run_chain_transfer(const experiment_context& ctx) {
    const auto& c = ctx.config;
    const int n = as_int(c, "n_states");
    const int K = as_int(c, "n_features");
    const double gamma = c.real("gamma");
    if (K > n) throw config_error("[chain-transfer] n_features exceeds n_states");
    auto mdp = build_chain_mdp(n, c.real("slip_prob"), c.real("left_reward"), c.real("right_reward"));
    auto path = policy_iteration(mdp, gamma, as_int(c, "max_iters"));
    const Eigen::Index J = static_cast<Eigen::Index>(path.size());

    std::vector<Eigen::MatrixXd> ebf, rsb, rnd;
    auto rng = ctx.rng(1);
    for (const auto& step : path) {
        Eigen::MatrixXd P = transition_matrix(mdp, step.policy);
        ebf.push_back(top_ebfs(eigendecompose(P), K));
        rsb.push_back(rsbf(P, gamma, K).vectors);
        rnd.push_back(randn_matrix(n, K, rng));
    }
    auto heat = [&](const std::vector<Eigen::MatrixXd>& fam, bool append) {
        Eigen::MatrixXd D(J, J);
        for (Eigen::Index i = 0; i < J; ++i) {
            Eigen::MatrixXd F = fam[i];
            if (append) {
                F.conservativeResize(Eigen::NoChange, K + 1);
                F.col(K) = path[i].values;
            }
            for (Eigen::Index j = 0; j < J; ++j) D(i, j) = vector_feature_distance(path[j].values, F);
        }
        return D;
    };

    experiment_result res;
    const std::vector<std::pair<std::string, const std::vector<Eigen::MatrixXd>*>> fams{
        {"ebf", &ebf}, {"rsbf", &rsb}, {"random", &rnd}};
    for (const auto& [name, fam] : fams) {
        res.files.emplace_back("heatmap_" + name + ".csv", heatmap_csv(heat(*fam, false)));
        res.files.emplace_back("heatmap_" + name + "_with_value.csv", heatmap_csv(heat(*fam, true)));
    }
    Eigen::MatrixXd values(J, n);
    for (Eigen::Index j = 0; j < J; ++j) values.row(j) = path[j].values.transpose();
    std::vector<std::string> vh{"iteration"};
    auto sh = indexed("v", n);
    vh.insert(vh.end(), sh.begin(), sh.end());
    csv_table vt(vh);
    for (Eigen::Index j = 0; j < J; ++j) {
        vt.row().add(static_cast<long>(j));
        for (int s = 0; s < n; ++s) vt.add(values(j, s));
    }
    res.files.emplace_back("value_path.csv", vt.str());
    auto sp0 = eigendecompose(transition_matrix(mdp, path.front().policy));
    add_basis_files(res, "spectrum_policy0", sp0.real_vectors(), sp0.real_values());
    res.files.emplace_back("mdp.json", mdp_to_json(mdp).dump(2) + "\n");
    res.derived["path_length"] = J;
    return res;
}

// ------------------------------------------------------ four-rooms-features

experiment_result run_four_rooms(const experiment_context& ctx) {
    const auto& c = ctx.config;
    const int K = as_int(c, "n_features");
    const int M = as_int(c, "n_heads");
    auto mdp = build_four_rooms();
    const int n = mdp.n_states;
    if (K > n) throw config_error("[four-rooms-features] n_features exceeds the number of cells");
    const long reward_state = c.integer("reward_state");
    if (reward_state >= n) throw config_error("[four-rooms-features] reward_state outside the grid");
    if (reward_state >= 0) mdp.reward(reward_state) = 1.0;
    const Eigen::MatrixXd P = transition_matrix(mdp, uniform_policy(mdp));

    flow_config cfg = read_flow_config(c, integrator::rk4);
    cfg.alpha = c.real("alpha");
    cfg.beta = c.real("beta");
    cfg.dt = c.real("dt");
    auto r1 = ctx.rng(1);
    auto r2 = ctx.rng(2);
    Eigen::MatrixXd phi0 = randn_matrix(n, K, r1);
    Eigen::MatrixXd w0 = init_heads(K, M, c.integer("scaled_heads") != 0, r2);
    auto tr = coupled_feature_flow(phi0, w0, P, mdp.reward, cfg);

    auto sp = eigendecompose(P);
    Eigen::MatrixXd U = sp.real_vectors();
    Eigen::MatrixXd top = orthonormal_basis(select_columns(U, 0, K));
    Eigen::MatrixXd bottom = orthonormal_basis(select_columns(U, n - K, K));
    tr.add_metric("grassmann_top", grassmann_convergence_metric(tr, top));
    tr.add_metric("grassmann_bottom", grassmann_convergence_metric(tr, bottom));
    std::vector<double> fro, rank;
    const double eps = c.real("rank_eps");
    for (const auto& S : tr.states) {
        fro.push_back(S.norm());
        rank.push_back(feature_rank(S, eps).rank);
    }
    tr.add_metric("frobenius", fro);
    tr.add_metric("feature_rank", rank);

    std::vector<std::string> names;
    std::vector<std::vector<double>> cols;
    for (const auto& [k, v] : tr.metrics) {
        names.push_back(k);
        cols.push_back(v);
    }
    experiment_result res;
    json info = info_json(tr);
    res.files.emplace_back("trajectory.csv", trajectory_csv(tr.times, names, cols));
    res.files.emplace_back("trajectory.json", sidecar(ctx, "four-rooms-features", names, info));
    res.files.emplace_back("final_features.csv", matrix_csv(tr.final_state(), indexed("phi", K)));
    add_basis_files(res, "spectrum", U, sp.real_values());
    res.derived["rk4_dt"] = cfg.dt;
    res.derived["n_states"] = n;
    return res;
}

// --------------------------------------------------------- random-cumulants

experiment_result run_random_cumulants(const experiment_context& ctx) {
    const auto& c = ctx.config;
    const int n = as_int(c, "n_states");
    const int K = as_int(c, "n_features");
    const int M = as_int(c, "n_heads");
    const int n_samples = as_int(c, "n_samples");
    const double gamma = c.real("gamma");
    auto mdp = build_random_mdp(n, as_int(c, "n_actions"), ctx.sub_seed(1));
    const Eigen::MatrixXd P = transition_matrix(mdp, uniform_policy(mdp));

    auto rs = ctx.rng(2);
    Eigen::MatrixXd B = randn_matrix(n, n, rs);
    Eigen::MatrixXd Sigma = B * B.transpose() / n;
    Sigma.diagonal().array() += c.real("sigma_jitter");
    Eigen::LLT<Eigen::MatrixXd> llt(Sigma);
    const Eigen::MatrixXd L = llt.matrixL();

    // One representative trajectory against the zero-reward ensemble.
    flow_config cfg = read_flow_config(c, integrator::rk4);
    cfg.dt = c.real("dt");
    cfg.alpha = 1.0;
    cfg.beta = 0.0;
    auto r3 = ctx.rng(3);
    Eigen::MatrixXd phi0 = randn_matrix(n, K, r3);
    Eigen::MatrixXd W = init_heads(K, M, true, r3);
    Eigen::MatrixXd C = L * randn_matrix(n, M, r3);
    auto tr = random_cumulant_flow(phi0, W, C, P, cfg);
    auto zero = coupled_feature_flow(phi0, W, P, Eigen::VectorXd::Zero(n), cfg);
    const Eigen::MatrixXd limit = random_cumulant_limit(W, C, P, gamma);
    std::vector<double> norm, dist, zero_norm;
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
        norm.push_back(tr.states[i].norm());
        dist.push_back((tr.states[i] - limit).norm());
        zero_norm.push_back(zero.states[i].norm());
    }
    std::vector<std::string> names{"frobenius", "distance_to_limit", "zero_reward_frobenius"};

    // Column covariance of the stationary features over fresh cumulant draws.
    auto r4 = ctx.rng(4);
    Eigen::MatrixXd emp = Eigen::MatrixXd::Zero(n, n);
    for (int s = 0; s < n_samples; ++s) {
        Eigen::MatrixXd Ws = init_heads(K, M, true, r4);
        Eigen::MatrixXd Cs = L * randn_matrix(n, M, r4);
        Eigen::MatrixXd phi = random_cumulant_limit(Ws, Cs, P, gamma);
        emp.noalias() += phi * phi.transpose();
    }
    emp /= static_cast<double>(n_samples) * K;
    const Eigen::MatrixXd theory = limiting_cumulant_covariance(P, gamma, Sigma);
    const double rel = (emp - theory).norm() / theory.norm();

    csv_table cov({"i", "j", "empirical", "theoretical"});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) cov.row().add(i).add(j).add(emp(i, j)).add(theory(i, j));

    experiment_result res;
    json info = info_json(tr);
    res.files.emplace_back("trajectory.csv", trajectory_csv(tr.times, names, {norm, dist, zero_norm}));
    res.files.emplace_back("trajectory.json", sidecar(ctx, "random-cumulants", names, info));
    res.files.emplace_back("covariance.csv", cov.str());
    res.files.emplace_back("sigma.csv", matrix_csv(Sigma, indexed("s", n)));
    res.files.emplace_back("mdp.json", mdp_to_json(mdp).dump(2) + "\n");
    res.derived["covariance_relative_error"] = rel;
    res.derived["rk4_dt"] = cfg.dt;
    return res;
}

// ------------------------------------------------------------ kernel-circle

experiment_result run_kernel_circle(const experiment_context& ctx) {
    const auto& c = ctx.config;
    const int n = as_int(c, "n_states");
    const long reward_state = c.integer("reward_state");
    const int n_train = as_int(c, "n_train");
    if (reward_state >= n || n_train > n) throw config_error("[kernel-circle] reward_state/n_train exceed n_states");
    auto circ = build_circle_mdp(n, static_cast<int>(reward_state), n_train);
    const Eigen::MatrixXd& P = circ.mdp.transition[0];
    const auto& R = circ.mdp.reward;
    const std::string emb = c.text("embedding");
    kernel_spec spec;
    if (emb == "circle")
        spec.embedding = circle_embedding(n);
    else if (emb == "line")
        spec.embedding = line_embedding(n);
    else
        throw config_error("[kernel-circle] embedding must be 'circle' or 'line'");

    flow_config cfg;
    cfg.t_end = c.real("t_end");
    cfg.n_snapshots = as_int(c, "n_snapshots");
    cfg.method = integrator::rk4;
    cfg.dt = c.real("dt");
    auto rng = ctx.rng(1);
    const Eigen::VectorXd V0 = randn_vector(n, rng, c.real("v0_scale"));

    csv_table sweep({"lengthscale", "gamma", "diverged", "divergence_time", "divergence_norm",
                     "train_bellman_residual", "test_max_abs", "train_mse", "test_mse", "trajectory_file"});
    experiment_result res;
    const auto ells = c.real_list("lengthscales");
    const auto gammas = c.real_list("gammas");
    std::vector<std::string> names = indexed("v", n);
    names.push_back("diverged");
    for (std::size_t a = 0; a < ells.size(); ++a)
        for (std::size_t b = 0; b < gammas.size(); ++b) {
            spec.lengthscale = ells[a];
            auto out = run_kernel_td(V0, spec, P, R, gammas[b], circ.train, cfg);
            const std::string file = "trajectory_l" + std::to_string(a) + "_g" + std::to_string(b) + ".csv";
            std::vector<std::vector<double>> cols(n + 1);
            for (const auto& S : out.trajectory.states) {
                for (int s = 0; s < n; ++s) cols[s].push_back(S(s, 0));
                cols[n].push_back(out.diverged ? 1.0 : 0.0);
            }
            res.files.emplace_back(file, trajectory_csv(out.trajectory.times, names, cols));
            sweep.row().add(ells[a]).add(gammas[b]).add(out.diverged ? 1 : 0);
            if (out.diverged) {
                sweep.add(out.divergence_time).add(out.divergence_norm);
                for (int k = 0; k < 4; ++k) sweep.add_empty();
            } else {
                sweep.add_empty().add_empty();
                sweep.add(out.train_bellman_residual).add(out.test_max_abs).add(out.train_mse).add(out.test_mse);
            }
            sweep.add(file);
        }
    res.files.insert(res.files.begin(), {"sweep.csv", sweep.str()});
    res.files.emplace_back("mdp.json", mdp_to_json(circ.mdp).dump(2) + "\n");
    res.derived["rk4_dt"] = cfg.dt;
    res.derived["train_states"] = circ.train;
    return res;
}

// --------------------------------------------- smooth-kernel-generalization

experiment_result run_smooth_kernel(const experiment_context& ctx) {
    const auto& c = ctx.config;
    const int n = as_int(c, "n_states");
    const int n_mdps = as_int(c, "n_mdps");
    const double gamma = c.real("gamma");
    const int size = as_int(c, "kernel_size");
    if (size > n) throw config_error("[smooth-kernel-generalization] kernel_size exceeds n_states");
    const std::string which = c.text("kernel_indices");
    std::vector<int> S(size);
    if (which == "top")
        std::iota(S.begin(), S.end(), 0);
    else if (which == "bottom")
        std::iota(S.begin(), S.end(), n - size);
    else
        throw config_error("[smooth-kernel-generalization] kernel_indices must be 'top' or 'bottom'");
    std::vector<std::pair<std::string, generalization_target>> targets;
    for (const auto& name : c.text_list("targets")) {
        generalization_target t;
        try {
            t.kind = parse_regression_target(name);
        } catch (const invalid_argument& e) {
            throw config_error(std::string("[smooth-kernel-generalization] ") + e.what());
        }
        t.n = as_int(c, "nstep_n");
        t.top_count = as_int(c, "projection_size");
        targets.emplace_back(name, t);
    }
    const auto fractions = c.real_list("train_fractions");

    std::vector<std::vector<std::vector<double>>> mse(
        targets.size(), std::vector<std::vector<double>>(fractions.size()));
    csv_table raw({"mdp", "target", "train_fraction", "mse"});
    for (int m = 0; m < n_mdps; ++m) {
        auto mdp = build_random_graph_mdp(n, c.real("edge_prob"), ctx.sub_seed(1000000 + m));
        auto rr = ctx.rng(2000000 + m);
        const Eigen::VectorXd R = randn_vector(n, rr);
        const Eigen::MatrixXd& P = mdp.transition[0];
        const spectrum sp = eigendecompose(P);
        for (std::size_t ti = 0; ti < targets.size(); ++ti) {
            const Eigen::VectorXd y = generalization_target_vector(sp, P, R, gamma, targets[ti].second);
            for (std::size_t f = 0; f < fractions.size(); ++f) {
                // the split depends on (mdp, fraction) only, so targets share it
                auto split_rng = ctx.rng(3000000 + static_cast<std::uint64_t>(m) * 1024 + f);
                double e = smooth_kernel_generalization(sp, y, S, fractions[f], split_rng);
                mse[ti][f].push_back(e);
                raw.row().add(m).add(targets[ti].first).add(fractions[f]).add(e);
            }
        }
    }
    csv_table summary({"target", "train_fraction", "mean_mse", "std_error", "n_mdps"});
    for (std::size_t ti = 0; ti < targets.size(); ++ti)
        for (std::size_t f = 0; f < fractions.size(); ++f) {
            const auto& v = mse[ti][f];
            const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
            double var = 0.0;
            for (double x : v) var += (x - mean) * (x - mean);
            const double se = v.size() > 1 ? std::sqrt(var / (v.size() - 1) / v.size()) : 0.0;
            summary.row().add(targets[ti].first).add(fractions[f]).add(mean).add(se).add(v.size());
        }
    experiment_result res;
    res.files.emplace_back("summary.csv", summary.str());
    res.files.emplace_back("raw.csv", raw.str());
    res.derived["tikhonov_jitter"] = 1e-10;
    res.derived["kernel_eigen_indices"] = S;
    return res;
}

// ---------------------------------------------------------------- bms-select

experiment_result run_bms(const experiment_context& ctx) {
    const auto& c = ctx.config;
    task_kind kind;
    try {
        kind = parse_task_kind(c.text("task"));
    } catch (const invalid_argument& e) {
        throw config_error(std::string("[bms-select] ") + e.what());
    }
    task_params tp;
    tp.n = as_int(c, "n_points");
    tp.prior_variance = c.real("prior_variance");
    tp.noise_variance = c.real("noise_variance");
    const int n_datasets = as_int(c, "n_datasets");
    const int n_seeds = as_int(c, "n_seeds");
    const auto ks = as_ints(c.real_list("ks"));
    const int ls_k = as_int(c, "ls_k");
    const int alg1_seeds = as_int(c, "alg1_seeds");
    const double lr = c.real("alg1_lr");
    const int steps = as_int(c, "alg1_steps");

    std::size_t n_models = 0;
    std::vector<std::string> model_names;
    // accumulators: column-wise sums over datasets
    std::vector<double> exact, L, L_var, LS, LS_var, gap, alg1, alg1_var, weight;
    std::vector<std::vector<double>> Lk;
    std::string dataset_csv;
    for (int d = 0; d < n_datasets; ++d) {
        auto task = model_selection_task(kind, ctx.sub_seed(1000 + d), tp);
        if (d == 0) {
            n_models = task.models.size();
            for (const auto& m : task.models) model_names.push_back(m.name);
            exact.assign(n_models, 0.0);
            L = L_var = LS = LS_var = gap = alg1 = alg1_var = weight = exact;
            Lk.assign(ks.size(), exact);
            const auto& X = task.data.inputs;
            std::vector<std::string> h{"position", "index"};
            auto xh = indexed("x", X.cols());
            h.insert(h.end(), xh.begin(), xh.end());
            h.push_back("y");
            csv_table dt(h);
            for (int i = 0; i < task.data.size(); ++i) {
                const int idx = task.data.order[i];
                dt.row().add(i).add(idx);
                for (Eigen::Index j = 0; j < X.cols(); ++j) dt.add(X(idx, j));
                dt.add(task.data.targets(idx));
            }
            dataset_csv = dt.str();
        }
        const std::uint64_t base = 100000 + static_cast<std::uint64_t>(d) * 1000;
        auto w = ensemble_weight_ranking(task.models, task.data, ctx.sub_seed(base));
        for (std::size_t m = 0; m < n_models; ++m) {
            const auto& model = task.models[m];
            const std::uint64_t s = ctx.sub_seed(base + 1 + m);
            exact[m] += exact_log_ml(model, task.data);
            gap[m] += kl_gap(model, task.data);
            auto l = estimate_L(model, task.data, n_seeds, s);
            L[m] += l.value;
            L_var[m] += l.std_error * l.std_error;
            for (std::size_t k = 0; k < ks.size(); ++k) Lk[k][m] += estimate_Lk(model, task.data, ks[k], n_seeds, s).value;
            auto ls = estimate_LS(model, task.data, ls_k, n_seeds, s);
            LS[m] += ls.value;
            LS_var[m] += ls.std_error * ls.std_error;
            std::vector<double> a;
            for (int r = 0; r < alg1_seeds; ++r)
                a.push_back(algorithm1_sumloss(model, task.data, ctx.sub_seed(base + 500 + m * 16 + r), lr, steps));
            const double am = std::accumulate(a.begin(), a.end(), 0.0) / a.size();
            double av = 0.0;
            for (double x : a) av += (x - am) * (x - am);
            alg1[m] += am;
            if (a.size() > 1) alg1_var[m] += av / (a.size() - 1) / a.size();
            weight[m] += w.weights(static_cast<Eigen::Index>(m));
        }
    }
    const double nd = n_datasets;
    std::vector<std::string> h{"model", "exact", "L", "L_stderr"};
    for (int k : ks) h.push_back("Lk_" + std::to_string(k));
    h.insert(h.end(), {"LS", "LS_stderr", "kl_gap", "alg1", "alg1_stderr", "ensemble_weight"});
    csv_table rep(h);
    auto argmax = [&](const std::vector<double>& v) {
        return model_names[std::max_element(v.begin(), v.end()) - v.begin()];
    };
    for (std::size_t m = 0; m < n_models; ++m) {
        rep.row().add(model_names[m]).add(exact[m] / nd).add(L[m] / nd).add(std::sqrt(L_var[m]) / nd);
        for (const auto& v : Lk) rep.add(v[m] / nd);
        rep.add(LS[m] / nd).add(std::sqrt(LS_var[m]) / nd).add(gap[m] / nd);
        rep.add(alg1[m] / nd).add(std::sqrt(alg1_var[m]) / nd).add(weight[m] / nd);
    }
    experiment_result res;
    res.files.emplace_back("report.csv", rep.str());
    res.files.emplace_back("dataset.csv", dataset_csv);
    res.derived["argmax"] = {{"exact", argmax(exact)}, {"L", argmax(L)}, {"LS", argmax(LS)},
                             {"alg1", argmax(alg1)}, {"ensemble_weight", argmax(weight)}};
    for (std::size_t k = 0; k < ks.size(); ++k) res.derived["argmax"]["Lk_" + std::to_string(ks[k])] = argmax(Lk[k]);
    res.derived["alg1_lambda"] = tp.noise_variance / tp.prior_variance;
    return res;
}

// ---------------------------------------------------------- misa-robustness

experiment_result run_misa(const experiment_context& ctx) {
    const auto& c = ctx.config;
    const std::string agg_name = c.text("aggregation");
    aggregation agg;
    if (agg_name == "intersection")
        agg = aggregation::intersection;
    else if (agg_name == "largest")
        agg = aggregation::largest;
    else
        throw config_error("[misa-robustness] aggregation must be 'intersection' or 'largest'");
    const auto scm = synthetic_family_scm();
    const long var = c.integer("intervention_var");
    if (var >= scm.p()) throw config_error("[misa-robustness] intervention_var out of range");
    auto data = build_synthetic_family(as_int(c, "n_envs"), as_int(c, "n_steps"), ctx.sub_seed(1),
                                       c.real_list("intervention_scales"));
    auto report = linear_misa(data, c.real("alpha"), agg);
    std::vector<int> all(scm.p());
    std::iota(all.begin(), all.end(), 0);
    const Eigen::VectorXd w_full = fit_reward_weights(data, all);
    const Eigen::VectorXd w_misa = fit_reward_weights(data, report.selected);
    auto curve = intervention_robustness(w_full, w_misa, scm, static_cast<int>(var), c.real_list("values"),
                                         as_int(c, "horizon"));

    csv_table rob({"value", "full_error", "misa_error"});
    for (std::size_t i = 0; i < curve.values.size(); ++i)
        rob.row().add(curve.values[i]).add(curve.full_error[i]).add(curve.misa_error[i]);
    csv_table wt({"variable", "full", "misa"});
    for (int v = 0; v < scm.p(); ++v) wt.row().add("x" + std::to_string(v)).add(w_full(v)).add(w_misa(v));
    std::ostringstream env;
    write_env_dataset_csv(env, data);

    experiment_result res;
    res.files.emplace_back("robustness.csv", rob.str());
    res.files.emplace_back("weights.csv", wt.str());
    res.files.emplace_back("env_dataset.csv", env.str());
    res.files.emplace_back("causal_report.json", to_json(report).dump(2) + "\n");
    res.derived["selected"] = report.selected;
    res.derived["alpha_used"] = report.alpha_used;
    res.derived["icp_calls"] = report.calls.size();
    return res;
}

// ----------------------------------------------------------- capacity-ranks

experiment_result run_capacity(const experiment_context& ctx) {
    const auto& c = ctx.config;
    const int n = as_int(c, "n_states");
    auto mdp = build_chain_mdp(n, c.real("slip_prob"), c.real("left_reward"), c.real("right_reward"));
    optimizer_spec opt;
    const std::string kind = c.text("optimizer");
    if (kind == "sgd")
        opt.kind = optimizer_kind::sgd;
    else if (kind == "adam")
        opt.kind = optimizer_kind::adam;
    else
        throw config_error("[capacity-ranks] optimizer must be 'sgd' or 'adam'");
    opt.lr = c.real("lr");
    opt.beta1 = c.real("beta1");
    opt.beta2 = c.real("beta2");
    opt.eps = c.real("adam_eps");
    opt.reset_state = c.integer("reset_state") != 0;
    const double gamma = c.real("gamma");
    const double eps_fraction = c.real("eps_fraction");
    const double feature_eps = c.real("feature_eps");

    std::vector<td_transition> transitions;
    for (int x = 0; x < n; ++x) transitions.push_back({x, mdp.reward(x), std::min(x + 1, n - 1)});

    csv_table upd(rank_header()), feat(rank_header());
    auto rng = ctx.rng(1);
    auto evaluate = [&](const std::string& label, const std::string& ell, const Eigen::MatrixXd& F) {
        const Eigen::VectorXd w = randn_vector(F.cols(), rng);
        const Eigen::MatrixXd U = linear_td_update_matrix(F, w, transitions, gamma, opt);
        add_rank_row(upd, label, ell, update_rank(U, eps_fraction), eps_fraction);
        add_rank_row(feat, label, ell, feature_rank(F, feature_eps), feature_eps);
    };
    evaluate("tabular", "", Eigen::MatrixXd::Identity(n, n));
    for (double ell : c.real_list("lengthscales")) evaluate("rbf", format_real(ell), rbf_features(n, ell));

    experiment_result res;
    res.files.emplace_back("update_ranks.csv", upd.str());
    res.files.emplace_back("feature_ranks.csv", feat.str());
    res.derived["n_transitions"] = transitions.size();
    return res;
}

// ------------------------------------------------------------ second-order

experiment_result run_second_order(const experiment_context& ctx) {
    const auto& c = ctx.config;
    const int n = as_int(c, "n_states");
    const double gamma = c.real("gamma");
    const double T = c.real("t_total");
    auto mdp = build_random_mdp(n, as_int(c, "n_actions"), ctx.sub_seed(1));
    const Eigen::MatrixXd P = transition_matrix(mdp, uniform_policy(mdp));
    auto rng = ctx.rng(2);
    const Eigen::VectorXd V0 = randn_vector(n, rng);

    csv_table tab({"alpha", "n_steps", "error_first_order", "error_corrected", "ratio_first_order", "ratio_corrected"});
    double prev_first = 0.0, prev_corr = 0.0;
    bool first = true;
    for (double alpha : c.real_list("alphas")) {
        const double steps = T / alpha;
        const long n_steps = std::lround(steps);
        if (n_steps < 1 || std::abs(steps - n_steps) > 1e-9 * steps)
            throw config_error("[second-order] t_total must be an integer multiple of every alpha");
        auto r = second_order_check(V0, P, mdp.reward, gamma, alpha, static_cast<int>(n_steps));
        const double e1 = (r.discrete - r.first_order).lpNorm<Eigen::Infinity>();
        const double e2 = (r.discrete - r.corrected).lpNorm<Eigen::Infinity>();
        tab.row().add(alpha).add(n_steps).add(e1).add(e2);
        if (first) {
            tab.add_empty().add_empty();
        } else {
            tab.add(prev_first / e1).add(prev_corr / e2);
        }
        prev_first = e1;
        prev_corr = e2;
        first = false;
    }
    experiment_result res;
    res.files.emplace_back("richardson.csv", tab.str());
    res.files.emplace_back("mdp.json", mdp_to_json(mdp).dump(2) + "\n");
    return res;
}

std::vector<experiment_def> build_registry() {
    const double g_hi = 1.0 - 1e-12;
    std::vector<experiment_def> r;
    r.push_back({"two-state",
                 "TD, Monte Carlo, n-step and TD(lambda) value flows on a two-state MDP",
                 {list_param("transition", "0.1, 0.9, 0.9, 0.1", "row-major 2x2 transition matrix", 0.0, 1.0),
                  list_param("reward", "1, 0", "state rewards"),
                  list_param("v0", "0, 0", "initial values"),
                  real_param("gamma", "0.9", "discount", 0.0, g_hi),
                  int_param("nstep", "3", "horizon of the n-step flow", 1),
                  real_param("lambda", "0.5", "TD(lambda) trace parameter", 0.0, 1.0 - 1e-12),
                  real_param("t_end", "10", "final time", 0.0),
                  int_param("n_snapshots", "201", "grid size", 1)},
                 run_two_state});
    r.push_back({"chain-transfer",
                 "Grassmann transfer heatmaps along the policy-iteration path of a chain",
                 {int_param("n_states", "30", "chain length", 2),
                  real_param("slip_prob", "0.01", "slip probability", 0.0, 1.0),
                  real_param("left_reward", "2", "reward at the left end"),
                  real_param("right_reward", "1", "reward at the right end"),
                  real_param("gamma", "0.9", "discount", 0.0, g_hi),
                  int_param("n_features", "4", "features per family", 1),
                  int_param("max_iters", "100", "policy iteration cap", 1)},
                 run_chain_transfer});
    r.push_back({"four-rooms-features",
                 "Coupled feature flow on four rooms with Grassmann and rank metrics",
                 {int_param("n_features", "10", "feature dimension", 1),
                  int_param("n_heads", "20", "value heads", 1),
                  int_param("scaled_heads", "1", "1: heads N(0, 1/M); 0: N(0, 1)", 0, 1),
                  int_param("reward_state", "-1", "cell with unit reward, -1 for none", -1),
                  real_param("gamma", "0.99", "discount", 0.0, g_hi),
                  real_param("alpha", "1", "feature learning rate", 0.0),
                  real_param("beta", "0", "head learning rate", 0.0),
                  real_param("t_end", "100", "final time", 0.0),
                  real_param("dt", "0.05", "RK4 step", 1e-9),
                  int_param("n_snapshots", "101", "grid size", 1),
                  real_param("rank_eps", "0.01", "feature-rank threshold", 0.0)},
                 run_four_rooms});
    r.push_back({"random-cumulants",
                 "Random-cumulant feature flow and its limiting covariance",
                 {int_param("n_states", "10", "states", 1),
                  int_param("n_actions", "2", "actions (uniform policy)", 1),
                  int_param("n_features", "2", "feature dimension", 1),
                  int_param("n_heads", "2000", "value heads", 1),
                  int_param("n_samples", "5000", "cumulant draws for the covariance", 1),
                  real_param("gamma", "0.9", "discount", 0.0, g_hi),
                  real_param("sigma_jitter", "0.1", "added to the diagonal of the cumulant covariance", 0.0),
                  real_param("t_end", "50", "final time", 0.0),
                  real_param("dt", "0.05", "RK4 step", 1e-9),
                  int_param("n_snapshots", "101", "grid size", 1)},
                 run_random_cumulants});
    r.push_back({"kernel-circle",
                 "Kernel TD with held-out states on the circle MDP",
                 {int_param("n_states", "50", "states", 1),
                  int_param("reward_state", "24", "rewarding state", 0),
                  int_param("n_train", "40", "train states 0..n_train-1", 1),
                  text_param("embedding", "circle", "circle or line"),
                  list_param("lengthscales", "0.01, 1, 100", "RBF lengthscales", 1e-12),
                  list_param("gammas", "0.5, 0.99", "discounts", 0.0, g_hi),
                  real_param("v0_scale", "0", "sd of the initial values", 0.0),
                  real_param("t_end", "100", "final time", 0.0),
                  real_param("dt", "0.01", "RK4 step", 1e-9),
                  int_param("n_snapshots", "101", "grid size", 1)},
                 run_kernel_circle});
    r.push_back({"smooth-kernel-generalization",
                 "Eigen-kernel regression error against the train fraction on random graphs",
                 {int_param("n_states", "100", "graph nodes", 2),
                  real_param("edge_prob", "0.1", "edge probability", 0.0, 1.0),
                  int_param("n_mdps", "50", "sampled graphs", 1),
                  real_param("gamma", "0.9", "discount", 0.0, g_hi),
                  text_param("kernel_indices", "top", "top or bottom eigenvectors"),
                  int_param("kernel_size", "20", "eigenvectors in the kernel", 1),
                  {"targets", param_type::text_list, "value, projected-top, projected-bottom, nstep",
                   "regression targets"},
                  int_param("nstep_n", "3", "horizon of the nstep target", 1),
                  int_param("projection_size", "20", "eigenvectors kept by projected targets", 1),
                  list_param("train_fractions", "0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9", "fractions", 1e-12, 1.0)},
                 run_smooth_kernel});
    r.push_back({"bms-select",
                 "Bayesian model selection with exact and sampled evidence estimators",
                 {text_param("task", "feature_dimension", "feature_dimension, prior_variance or rff_frequency"),
                  int_param("n_points", "30", "points per dataset", 2),
                  real_param("prior_variance", "0.002", "prior variance (feature_dimension task)", 1e-300),
                  real_param("noise_variance", "0.5", "noise variance (feature_dimension task)", 1e-300),
                  int_param("n_datasets", "5", "datasets averaged", 1),
                  int_param("n_seeds", "50", "sampling seeds per estimator", 2),
                  list_param("ks", "1, 4, 16, 64", "sample counts for the k-sample estimator", 1),
                  int_param("ls_k", "16", "samples for the variance-corrected estimator", 2),
                  int_param("alg1_seeds", "4", "runs of the sample-then-optimize estimator", 1),
                  real_param("alg1_lr", "2.5e-4", "gradient-descent step", 1e-300),
                  int_param("alg1_steps", "100", "gradient steps per point", 1)},
                 run_bms});
    r.push_back({"misa-robustness",
                 "Linear MISA on the three-variable family and intervention robustness",
                 {int_param("n_envs", "3", "environments", 2),
                  int_param("n_steps", "1000", "transitions per environment", 2),
                  list_param("intervention_scales", "3", "noise scale of the intervened variable", 0.0),
                  real_param("alpha", "0.05", "test level", 1e-12, 1.0),
                  text_param("aggregation", "intersection", "intersection or largest"),
                  int_param("intervention_var", "2", "variable set by do()", 0),
                  list_param("values", "0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10", "do() values"),
                  int_param("horizon", "50", "test steps averaged", 1)},
                 run_misa});
    r.push_back({"capacity-ranks",
                 "Update and feature ranks for tabular and RBF linear TD on a chain",
                 {int_param("n_states", "30", "chain length", 2),
                  real_param("slip_prob", "0.01", "slip probability", 0.0, 1.0),
                  real_param("left_reward", "2", "reward at the left end"),
                  real_param("right_reward", "1", "reward at the right end"),
                  list_param("lengthscales", "10, 1, 0.1", "RBF lengthscales", 1e-12),
                  text_param("optimizer", "sgd", "sgd or adam"),
                  real_param("lr", "0.1", "step size", 0.0),
                  real_param("beta1", "0.9", "adam first-moment decay", 0.0, 1.0),
                  real_param("beta2", "0.999", "adam second-moment decay", 0.0, 1.0),
                  real_param("adam_eps", "1e-8", "adam epsilon", 0.0),
                  int_param("reset_state", "1", "fresh optimizer state per row", 0, 1),
                  real_param("gamma", "0.9", "discount", 0.0, g_hi),
                  real_param("eps_fraction", "0.1", "update-rank threshold", 0.0),
                  real_param("feature_eps", "0.01", "feature-rank threshold", 0.0)},
                 run_capacity});
    r.push_back({"second-order",
                 "Euler TD against first-order and corrected flows (Richardson table)",
                 {int_param("n_states", "5", "states", 1),
                  int_param("n_actions", "1", "actions (uniform policy)", 1),
                  real_param("gamma", "0.9", "discount", 0.0, g_hi),
                  list_param("alphas", "0.1, 0.05, 0.025", "step sizes", 1e-12),
                  real_param("t_total", "2", "integration time", 1e-12)},
                 run_second_order});
    return r;
}

}  // namespace

const std::vector<experiment_def>& experiments() {
    static const std::vector<experiment_def> registry = build_registry();
    return registry;
}

const experiment_def* find_experiment(const std::string& name) {
    for (const auto& e : experiments())
        if (e.name == name) return &e;
    return nullptr;
}

std::uint64_t experiment_index(const std::string& name) {
    const auto& all = experiments();
    for (std::size_t i = 0; i < all.size(); ++i)
        if (all[i].name == name) return i;
    throw config_error("unknown experiment '" + name + "'");
}

resolved_config resolve_config(const experiment_def& def, const config_document& doc) {
    return resolved_config(def.params, doc.find(def.name), def.name);
}

std::vector<std::string> validate_config(const config_document& doc) {
    std::vector<std::string> names;
    for (const auto& [section, entries] : doc.sections) {
        const auto* def = find_experiment(section);
        if (!def) throw config_error("unknown section [" + section + "]");
        resolved_config(def->params, &entries, section);
        names.push_back(section);
    }
    return names;
}

}  // namespace lab
