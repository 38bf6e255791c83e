#include "lab/causal.hpp"

#include <boost/math/distributions/fisher_f.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "lab/errors.hpp"
#include "lab/format.hpp"
#include "lab/rng.hpp"

namespace lab {

namespace {

constexpr int k_max_variables = 12;

// Upper tail of F(d1, d2) at f.
double f_sf(double f, double d1, double d2) {
    if (!std::isfinite(f)) return 0.0;
    if (f <= 0.0) return 1.0;
    boost::math::fisher_f dist(d1, d2);
    return boost::math::cdf(boost::math::complement(dist, f));
}

// One-way ANOVA F-test p-value for equal group means.
double anova_p(const std::vector<Eigen::VectorXd>& groups) {
    const double k = static_cast<double>(groups.size());
    double N = 0.0, total = 0.0;
    for (const auto& g : groups) {
        N += static_cast<double>(g.size());
        total += g.sum();
    }
    const double grand = total / N;
    double between = 0.0, within = 0.0;
    for (const auto& g : groups) {
        const double m = g.mean();
        between += static_cast<double>(g.size()) * (m - grand) * (m - grand);
        within += (g.array() - m).square().sum();
    }
    const double d1 = k - 1.0, d2 = N - k;
    if (within <= 0.0) return between > 0.0 ? 0.0 : 1.0;
    return f_sf((between / d1) / (within / d2), d1, d2);
}

// Levene's test: ANOVA on absolute deviations from the group means.
double levene_p(const std::vector<Eigen::VectorXd>& groups) {
    std::vector<Eigen::VectorXd> dev;
    dev.reserve(groups.size());
    for (const auto& g : groups) dev.push_back((g.array() - g.mean()).abs().matrix());
    return anova_p(dev);
}

Eigen::VectorXd target_column(const environment& e, const icp_target& t) {
    return t.is_reward ? e.reward : Eigen::VectorXd(e.next.col(t.var));
}

std::vector<int> sorted_unique(std::vector<int> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

}  // namespace

void env_dataset::validate() const {
    if (envs.empty()) throw insufficient_environments("dataset has no environments");
    const int dim = p();
    for (const auto& e : envs) {
        if (e.inputs.cols() != dim || e.next.cols() != dim) throw dimension_mismatch("environments disagree on p");
        if (e.next.rows() != e.inputs.rows() || e.reward.size() != e.inputs.rows())
            throw dimension_mismatch("environment arrays differ in length");
        if (e.inputs.rows() < dim + 2) throw invalid_argument("each environment needs at least p + 2 samples");
        if (!e.inputs.allFinite() || !e.next.allFinite() || !e.reward.allFinite())
            throw invalid_argument("environment data must be finite");
    }
}

std::string icp_target::name() const { return is_reward ? "reward" : "x" + std::to_string(var) + "'"; }

bool icp_result::identified() const {
    bool rejected = false, inter_accepted = false;
    for (const auto& t : tests) {
        if (t.skipped) continue;
        rejected = rejected || !t.accepted;
        inter_accepted = inter_accepted || (t.accepted && t.subset == intersection);
    }
    // With nothing rejected the tests cannot separate any candidate sets.
    return rejected && inter_accepted;
}

icp_result icp_parents(const icp_target& target, const std::vector<int>& candidates, const env_dataset& data,
                       double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw invalid_argument("alpha must lie in (0,1)");
    if (candidates.empty()) throw invalid_argument("candidate set is empty");
    data.validate();
    if (data.envs.size() < 2) throw insufficient_environments("invariance tests need at least two environments");
    const int dim = data.p();
    const auto cand = sorted_unique(candidates);
    if (static_cast<int>(cand.size()) > k_max_variables)
        throw invalid_argument("subset enumeration is capped at 12 candidate variables");
    for (int c : cand)
        if (c < 0 || c >= dim) throw invalid_argument("candidate index out of range");
    if (!target.is_reward && (target.var < 0 || target.var >= dim)) throw invalid_argument("target variable out of range");

    Eigen::Index N = 0;
    for (const auto& e : data.envs) N += e.inputs.rows();
    Eigen::VectorXd y(N);
    {
        Eigen::Index off = 0;
        for (const auto& e : data.envs) {
            y.segment(off, e.inputs.rows()) = target_column(e, target);
            off += e.inputs.rows();
        }
    }

    icp_result res;
    res.target = target;
    res.alpha = alpha;
    const int m = static_cast<int>(cand.size());
    std::vector<int> inter;
    bool first = true;
    bool has_largest = false;
    for (unsigned mask = 0; mask < (1u << m); ++mask) {
        subset_test st;
        for (int k = 0; k < m; ++k)
            if (mask & (1u << k)) st.subset.push_back(cand[k]);
        Eigen::MatrixXd X(N, st.subset.size() + 1);
        Eigen::Index off = 0;
        for (const auto& e : data.envs) {
            const Eigen::Index ne = e.inputs.rows();
            X.block(off, 0, ne, 1).setOnes();
            for (std::size_t k = 0; k < st.subset.size(); ++k) X.block(off, k + 1, ne, 1) = e.inputs.col(st.subset[k]);
            off += ne;
        }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
        qr.setThreshold(1e-10);
        if (qr.rank() < X.cols()) {
            st.skipped = true;
            res.tests.push_back(st);
            continue;
        }
        Eigen::VectorXd resid = y - X * qr.solve(y);
        std::vector<Eigen::VectorXd> groups;
        off = 0;
        for (const auto& e : data.envs) {
            groups.push_back(resid.segment(off, e.inputs.rows()));
            off += e.inputs.rows();
        }
        st.p_mean = anova_p(groups);
        st.p_variance = levene_p(groups);
        st.p_value = std::min(1.0, 2.0 * std::min(st.p_mean, st.p_variance));
        st.accepted = st.p_value > alpha;
        if (st.accepted) {
            res.any_accepted = true;
            if (first) {
                inter = st.subset;
                first = false;
            } else {
                std::vector<int> tmp;
                std::set_intersection(inter.begin(), inter.end(), st.subset.begin(), st.subset.end(),
                                      std::back_inserter(tmp));
                inter = tmp;
            }
            if (!has_largest || st.subset.size() > res.largest.size()) {
                res.largest = st.subset;
                has_largest = true;
            }
        }
        res.tests.push_back(st);
    }
    res.intersection = res.any_accepted ? inter : std::vector<int>{};
    return res;
}

causal_report linear_misa(const env_dataset& data, double alpha, aggregation agg) {
    data.validate();
    const int dim = data.p();
    if (dim > k_max_variables) throw invalid_argument("linear_misa supports at most 12 variables");
    if (data.envs.size() < 2) throw insufficient_environments("linear_misa needs at least two environments");
    if (!(alpha > 0.0 && alpha < 1.0)) throw invalid_argument("alpha must lie in (0,1)");
    causal_report rep;
    rep.alpha = alpha;
    rep.alpha_used = alpha / dim;
    rep.agg = agg;
    std::vector<int> all(dim);
    for (int v = 0; v < dim; ++v) all[v] = v;

    std::set<int> selected;
    std::vector<icp_target> stack{icp_target::reward()};
    while (!stack.empty()) {
        icp_target t = stack.back();
        stack.pop_back();
        icp_result r = icp_parents(t, all, data, rep.alpha_used);
        rep.identified = rep.identified && r.identified();
        const auto& found = agg == aggregation::intersection ? r.intersection : r.largest;
        for (int v : found)
            if (selected.insert(v).second) stack.push_back(icp_target::next_state(v));
        rep.calls.push_back(std::move(r));
    }
    rep.selected.assign(selected.begin(), selected.end());
    return rep;
}

nlohmann::json to_json(const causal_report& report) {
    nlohmann::json calls = nlohmann::json::array();
    for (const auto& c : report.calls) {
        nlohmann::json tests = nlohmann::json::array();
        for (const auto& t : c.tests)
            tests.push_back({{"subset", t.subset},
                             {"p_mean", t.p_mean},
                             {"p_variance", t.p_variance},
                             {"p_value", t.p_value},
                             {"accepted", t.accepted},
                             {"skipped", t.skipped}});
        calls.push_back({{"target", c.target.name()},
                         {"alpha", c.alpha},
                         {"intersection", c.intersection},
                         {"largest", c.largest},
                         {"any_accepted", c.any_accepted},
                         {"identified", c.identified()},
                         {"subsets", tests}});
    }
    return {{"selected", report.selected},
            {"alpha", report.alpha},
            {"alpha_used", report.alpha_used},
            {"aggregation", report.agg == aggregation::intersection ? "intersection" : "largest"},
            {"identified", report.identified},
            {"icp_calls", report.calls.size()},
            {"calls", calls}};
}

linear_scm synthetic_family_scm() {
    linear_scm s;
    s.A = Eigen::MatrixXd::Zero(3, 3);
    s.A(0, 0) = 1.0;
    s.A(1, 1) = 1.0;
    s.A(2, 1) = 1.0;
    s.noise_sd = Eigen::VectorXd::Ones(3);
    s.reward_weights = Eigen::Vector3d(1.0, 1.0, 0.0);
    s.reward_noise_sd = 0.1;
    return s;
}

env_dataset simulate_scm(const linear_scm& scm, const Eigen::MatrixXd& noise_scales, int n_steps, std::uint64_t seed) {
    const int dim = scm.p();
    if (noise_scales.cols() != dim) throw dimension_mismatch("noise_scales needs one column per variable");
    if (noise_scales.rows() < 2) throw insufficient_environments("need at least two environments");
    if (n_steps < 1) throw invalid_argument("n_steps must be positive");
    env_dataset data;
    for (Eigen::Index e = 0; e < noise_scales.rows(); ++e) {
        auto rng = make_rng(seed, 0x53434d, static_cast<std::uint64_t>(e));
        environment env;
        env.inputs.resize(n_steps, dim);
        env.next.resize(n_steps, dim);
        env.reward.resize(n_steps);
        Eigen::VectorXd x = Eigen::VectorXd::Zero(dim);
        for (int t = 0; t < n_steps; ++t) {
            env.inputs.row(t) = x.transpose();
            env.reward(t) = scm.reward_weights.dot(x) + scm.reward_noise_sd * randn(rng);
            Eigen::VectorXd eps(dim);
            for (int v = 0; v < dim; ++v) eps(v) = scm.noise_sd(v) * noise_scales(e, v) * randn(rng);
            x = scm.A * x + eps;
            env.next.row(t) = x.transpose();
        }
        data.envs.push_back(std::move(env));
    }
    return data;
}

env_dataset build_synthetic_family(int n_envs, int n_steps, std::uint64_t seed,
                                   const std::vector<double>& intervention_scales) {
    if (n_envs < 2) throw insufficient_environments("need at least two environments");
    if (intervention_scales.empty() ||
        (intervention_scales.size() != 1 && static_cast<int>(intervention_scales.size()) != n_envs))
        throw invalid_argument("intervention_scales needs one entry or one per environment");
    const linear_scm scm = synthetic_family_scm();
    Eigen::MatrixXd scales = Eigen::MatrixXd::Ones(n_envs, scm.p());
    for (int e = 0; e < n_envs; ++e)
        scales(e, e % scm.p()) = intervention_scales.size() == 1 ? intervention_scales[0] : intervention_scales[e];
    return simulate_scm(scm, scales, n_steps, seed);
}

Eigen::VectorXd fit_reward_weights(const env_dataset& data, const std::vector<int>& selected) {
    data.validate();
    const int dim = data.p();
    Eigen::VectorXd w = Eigen::VectorXd::Zero(dim);
    if (selected.empty()) return w;
    Eigen::Index N = 0;
    for (const auto& e : data.envs) N += e.inputs.rows();
    Eigen::MatrixXd X(N, selected.size());
    Eigen::VectorXd y(N);
    Eigen::Index off = 0;
    for (const auto& e : data.envs) {
        for (std::size_t k = 0; k < selected.size(); ++k) X.block(off, k, e.inputs.rows(), 1) = e.inputs.col(selected[k]);
        y.segment(off, e.inputs.rows()) = e.reward;
        off += e.inputs.rows();
    }
    Eigen::VectorXd c = X.colPivHouseholderQr().solve(y);
    for (std::size_t k = 0; k < selected.size(); ++k) w(selected[k]) = c(k);
    return w;
}

double expected_reward_mse(const Eigen::VectorXd& w, const linear_scm& scm, int var, double value, int horizon) {
    const int dim = scm.p();
    if (w.size() != dim) throw dimension_mismatch("weight length differs from p");
    if (var < 0 || var >= dim) throw invalid_argument("intervened variable out of range");
    if (horizon < 1) throw invalid_argument("horizon must be positive");
    const Eigen::VectorXd c = scm.reward_weights - w;
    Eigen::VectorXd m = Eigen::VectorXd::Zero(dim);
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(dim, dim);
    m(var) = value;
    Eigen::MatrixXd Q = scm.noise_sd.cwiseAbs2().asDiagonal();
    double acc = 0.0;
    for (int t = 1; t <= horizon; ++t) {
        m = scm.A * m;
        C = scm.A * C * scm.A.transpose() + Q;
        // hard intervention: the variable is a constant
        m(var) = value;
        C.row(var).setZero();
        C.col(var).setZero();
        acc += c.dot(C * c) + std::pow(c.dot(m), 2) + scm.reward_noise_sd * scm.reward_noise_sd;
    }
    return acc / horizon;
}

robustness_curve intervention_robustness(const Eigen::VectorXd& weights_full, const Eigen::VectorXd& weights_misa,
                                         const linear_scm& scm, int var, const std::vector<double>& values,
                                         int horizon) {
    robustness_curve c;
    c.values = values;
    for (double v : values) {
        c.full_error.push_back(expected_reward_mse(weights_full, scm, var, v, horizon));
        c.misa_error.push_back(expected_reward_mse(weights_misa, scm, var, v, horizon));
    }
    return c;
}

void write_env_dataset_csv(std::ostream& os, const env_dataset& data) {
    const int dim = data.p();
    os << "env";
    for (int v = 0; v < dim; ++v) os << ",x" << v;
    for (int v = 0; v < dim; ++v) os << ",next" << v;
    os << ",reward\n";
    for (std::size_t e = 0; e < data.envs.size(); ++e) {
        const auto& env = data.envs[e];
        for (Eigen::Index t = 0; t < env.inputs.rows(); ++t) {
            os << e;
            for (int v = 0; v < dim; ++v) os << ',' << format_real(env.inputs(t, v));
            for (int v = 0; v < dim; ++v) os << ',' << format_real(env.next(t, v));
            os << ',' << format_real(env.reward(t)) << '\n';
        }
    }
}

env_dataset read_env_dataset_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw invalid_argument("empty dataset CSV");
    const auto header = split_csv_line(line);
    if (header.size() < 4 || header[0] != "env" || header.back() != "reward" || (header.size() - 2) % 2 != 0)
        throw invalid_argument("dataset CSV header must be env,x..,next..,reward");
    const int dim = static_cast<int>((header.size() - 2) / 2);
    std::map<int, std::vector<std::vector<double>>> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != header.size()) throw invalid_argument("dataset CSV row has wrong field count");
        std::vector<double> vals;
        for (std::size_t k = 1; k < f.size(); ++k) vals.push_back(parse_real(f[k]));
        rows[std::stoi(f[0])].push_back(std::move(vals));
    }
    env_dataset data;
    for (auto& [id, rs] : rows) {
        environment env;
        const Eigen::Index n = static_cast<Eigen::Index>(rs.size());
        env.inputs.resize(n, dim);
        env.next.resize(n, dim);
        env.reward.resize(n);
        for (Eigen::Index t = 0; t < n; ++t) {
            for (int v = 0; v < dim; ++v) {
                env.inputs(t, v) = rs[t][v];
                env.next(t, v) = rs[t][dim + v];
            }
            env.reward(t) = rs[t][2 * dim];
        }
        data.envs.push_back(std::move(env));
    }
    return data;
}

}  // namespace lab
