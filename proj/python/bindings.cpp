#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lab/bms.hpp"
#include "lab/capacity.hpp"
#include "lab/causal.hpp"
#include "lab/config.hpp"
#include "lab/errors.hpp"
#include "lab/experiments.hpp"
#include "lab/flow.hpp"
#include "lab/kernel_td.hpp"
#include "lab/mdp.hpp"
#include "lab/spectral.hpp"

namespace py = pybind11;
using namespace lab;

namespace {

py::object from_json(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

flow_config make_cfg(double gamma, double t_end, int n_snapshots, const std::string& method, double dt) {
    flow_config c;
    c.gamma = gamma;
    c.t_end = t_end;
    c.n_snapshots = n_snapshots;
    c.dt = dt;
    if (method == "closed_form") c.method = integrator::closed_form;
    else if (method == "rk4") c.method = integrator::rk4;
    else throw invalid_argument("method must be 'closed_form' or 'rk4'");
    return c;
}

py::dict trajectory_dict(const flow_trajectory& tr) {
    py::dict d;
    d["times"] = tr.times;
    d["states"] = tr.states;
    d["weights"] = tr.weights;
    py::dict metrics;
    for (const auto& [k, v] : tr.metrics) metrics[py::str(k)] = v;
    d["metrics"] = metrics;
    py::dict info;
    for (const auto& [k, v] : tr.info) info[py::str(k)] = v;
    d["info"] = info;
    return d;
}

py::dict rank_dict(const rank_report& r) {
    py::dict d;
    d["rank"] = r.rank;
    d["singular_values"] = r.singular_values;
    d["threshold"] = r.threshold;
    d["n"] = r.n;
    d["d"] = r.d;
    return d;
}

py::dict estimate_dict(const estimate& e) {
    py::dict d;
    d["value"] = e.value;
    d["std_error"] = e.std_error;
    d["per_seed"] = e.per_seed;
    return d;
}

}  // namespace

PYBIND11_MODULE(_labkit, m) {
    m.doc() = "Learning-dynamics laboratory core";
    m.attr("__version__") = LAB_VERSION;

    static py::exception<lab_error> base(m, "LabError");
    static py::exception<divergence_detected> diverged(m, "DivergenceDetected", base.ptr());
    static py::exception<config_error> cfg_err(m, "ConfigError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const divergence_detected& e) {
            py::object exc = py::handle(diverged.ptr())(e.what());
            exc.attr("time") = e.time();
            exc.attr("norm") = e.norm();
            PyErr_SetObject(diverged.ptr(), exc.ptr());
        } catch (const invalid_argument& e) {
            PyErr_SetString(PyExc_ValueError, (std::string(e.kind()) + ": " + e.what()).c_str());
        } catch (const dimension_mismatch& e) {
            PyErr_SetString(PyExc_ValueError, (std::string(e.kind()) + ": " + e.what()).c_str());
        } catch (const lab_error& e) {
            py::set_error(base, (std::string(e.kind()) + ": " + e.what()).c_str());
        } catch (const config_error& e) {
            py::set_error(cfg_err, e.what());
        }
    });

    py::class_<tabular_mdp>(m, "TabularMDP")
        .def(py::init([](const std::vector<Eigen::MatrixXd>& transition, const Eigen::VectorXd& reward) {
                 tabular_mdp t;
                 t.n_actions = static_cast<int>(transition.size());
                 t.n_states = static_cast<int>(reward.size());
                 t.transition = transition;
                 t.reward = reward;
                 t.validate();
                 return t;
             }),
             py::arg("transition"), py::arg("reward"))
        .def_readonly("n_states", &tabular_mdp::n_states)
        .def_readonly("n_actions", &tabular_mdp::n_actions)
        .def_readonly("transition", &tabular_mdp::transition)
        .def_readonly("reward", &tabular_mdp::reward);

    m.def("chain_mdp", &build_chain_mdp, py::arg("n_states"), py::arg("slip_prob") = 0.01, py::arg("left_reward") = 2.0,
          py::arg("right_reward") = 1.0);
    m.def("four_rooms", &build_four_rooms);
    m.def("random_mdp", &build_random_mdp, py::arg("n_states"), py::arg("n_actions"), py::arg("seed"));
    m.def("random_graph_mdp", &build_random_graph_mdp, py::arg("n_states"), py::arg("edge_prob"), py::arg("seed"));
    m.def(
        "circle_mdp",
        [](int n, int reward_state, int n_train) {
            auto c = build_circle_mdp(n, reward_state, n_train);
            return py::make_tuple(c.mdp, c.train);
        },
        py::arg("n_states") = 50, py::arg("reward_state") = 24, py::arg("n_train") = 40);
    m.def("uniform_policy", &uniform_policy);
    m.def("transition_matrix", &transition_matrix, py::arg("mdp"), py::arg("policy"));
    m.def("exact_value", &exact_value, py::arg("P"), py::arg("R"), py::arg("gamma"));

    m.def(
        "eigendecompose",
        [](const Eigen::MatrixXd& P) {
            auto s = eigendecompose(P);
            return py::make_tuple(s.eigenvalues, s.vectors, s.is_real);
        },
        py::arg("P"));
    m.def("resolvent", &resolvent, py::arg("P"), py::arg("gamma"));
    m.def(
        "rsbf",
        [](const Eigen::MatrixXd& P, double gamma, int K) {
            auto b = rsbf(P, gamma, K);
            return py::make_tuple(b.vectors, b.singular_values);
        },
        py::arg("P"), py::arg("gamma"), py::arg("K"));
    m.def("orthonormal_basis", &orthonormal_basis, py::arg("Y"), py::arg("rel_tol") = 1e-10);
    m.def("grassmann_distance", &grassmann_distance, py::arg("A"), py::arg("B"));

    auto flow_fn = [&m](const char* name, auto fn) {
        m.def(
            name,
            [fn](const Eigen::VectorXd& V0, const Eigen::MatrixXd& P, const Eigen::VectorXd& R, double gamma,
                 double t_end, int n_snapshots, const std::string& method, double dt) {
                return trajectory_dict(fn(V0, P, R, make_cfg(gamma, t_end, n_snapshots, method, dt)));
            },
            py::arg("V0"), py::arg("P"), py::arg("R"), py::arg("gamma"), py::arg("t_end"),
            py::arg("n_snapshots") = 101, py::arg("method") = "closed_form", py::arg("dt") = 1e-2);
    };
    flow_fn("td_value_flow", [](const auto&... a) { return td_value_flow(a...); });
    flow_fn("mc_value_flow", [](const auto&... a) { return mc_value_flow(a...); });
    m.def(
        "nstep_value_flow",
        [](const Eigen::VectorXd& V0, const Eigen::MatrixXd& P, const Eigen::VectorXd& R, int n, double gamma,
           double t_end, int n_snapshots, const std::string& method, double dt) {
            return trajectory_dict(nstep_value_flow(V0, P, R, n, make_cfg(gamma, t_end, n_snapshots, method, dt)));
        },
        py::arg("V0"), py::arg("P"), py::arg("R"), py::arg("n"), py::arg("gamma"), py::arg("t_end"),
        py::arg("n_snapshots") = 101, py::arg("method") = "closed_form", py::arg("dt") = 1e-2);
    m.def(
        "td_lambda_value_flow",
        [](const Eigen::VectorXd& V0, const Eigen::MatrixXd& P, const Eigen::VectorXd& R, double lam, double gamma,
           double t_end, int n_snapshots, const std::string& method, double dt) {
            return trajectory_dict(td_lambda_value_flow(V0, P, R, lam, make_cfg(gamma, t_end, n_snapshots, method, dt)));
        },
        py::arg("V0"), py::arg("P"), py::arg("R"), py::arg("lam"), py::arg("gamma"), py::arg("t_end"),
        py::arg("n_snapshots") = 101, py::arg("method") = "closed_form", py::arg("dt") = 1e-2);
    m.def("limiting_ensemble_flow", &limiting_ensemble_flow, py::arg("phi0"), py::arg("P"), py::arg("R"),
          py::arg("gamma"), py::arg("t"), py::arg("w_bar") = std::nullopt);

    m.def(
        "run_kernel_td",
        [](const Eigen::VectorXd& V0, double lengthscale, const Eigen::MatrixXd& embedding, const Eigen::MatrixXd& P,
           const Eigen::VectorXd& R, double gamma, const std::vector<int>& train, double t_end, double dt) {
            flow_config c = make_cfg(gamma, t_end, 101, "rk4", dt);
            auto o = run_kernel_td(V0, kernel_spec{lengthscale, embedding}, P, R, gamma, train, c);
            py::dict d;
            d["diverged"] = o.diverged;
            d["divergence_time"] = o.divergence_time;
            d["train_bellman_residual"] = o.train_bellman_residual;
            d["test_max_abs"] = o.test_max_abs;
            d["trajectory"] = trajectory_dict(o.trajectory);
            return d;
        },
        py::arg("V0"), py::arg("lengthscale"), py::arg("embedding"), py::arg("P"), py::arg("R"), py::arg("gamma"),
        py::arg("train"), py::arg("t_end") = 100.0, py::arg("dt") = 1e-2);
    m.def("circle_embedding", &circle_embedding, py::arg("n_states"));

    m.def("feature_rank", [](const Eigen::MatrixXd& phi, double eps) { return rank_dict(feature_rank(phi, eps)); },
          py::arg("phi"), py::arg("eps") = 0.01);
    m.def("srank", [](const Eigen::MatrixXd& phi, double eps) { return rank_dict(srank(phi, eps)); }, py::arg("phi"),
          py::arg("eps") = 0.01);
    m.def("update_rank", [](const Eigen::MatrixXd& U, double f) { return rank_dict(update_rank(U, f)); }, py::arg("U"),
          py::arg("eps_fraction") = 0.1);
    m.def("rbf_features", &rbf_features, py::arg("n_states"), py::arg("lengthscale"));

    py::class_<blr_model>(m, "BLRModel")
        .def_readonly("name", &blr_model::name)
        .def_readonly("prior_variance", &blr_model::prior_variance)
        .def_readonly("noise_variance", &blr_model::noise_variance)
        .def("features", [](const blr_model& b, const Eigen::MatrixXd& X) { return b.features.apply(X); });
    py::class_<ordered_dataset>(m, "OrderedDataset")
        .def_readonly("inputs", &ordered_dataset::inputs)
        .def_readonly("targets", &ordered_dataset::targets)
        .def_readonly("order", &ordered_dataset::order);
    m.def(
        "model_selection_task",
        [](const std::string& kind, std::uint64_t seed) {
            auto t = model_selection_task(parse_task_kind(kind), seed);
            return py::make_tuple(t.models, t.data);
        },
        py::arg("kind") = "feature_dimension", py::arg("seed") = 0);
    m.def("exact_log_ml", &exact_log_ml, py::arg("model"), py::arg("data"));
    m.def("estimate_L", [](const blr_model& b, const ordered_dataset& d, int n, std::uint64_t s) {
        return estimate_dict(estimate_L(b, d, n, s));
    }, py::arg("model"), py::arg("data"), py::arg("n_seeds"), py::arg("seed"));
    m.def("estimate_Lk", [](const blr_model& b, const ordered_dataset& d, int k, int n, std::uint64_t s) {
        return estimate_dict(estimate_Lk(b, d, k, n, s));
    }, py::arg("model"), py::arg("data"), py::arg("k"), py::arg("n_seeds"), py::arg("seed"));
    m.def("estimate_LS", [](const blr_model& b, const ordered_dataset& d, int k, int n, std::uint64_t s) {
        return estimate_dict(estimate_LS(b, d, k, n, s));
    }, py::arg("model"), py::arg("data"), py::arg("k"), py::arg("n_seeds"), py::arg("seed"));
    m.def("algorithm1_sumloss", &algorithm1_sumloss, py::arg("model"), py::arg("data"), py::arg("seed"),
          py::arg("lr"), py::arg("steps"));

    m.def(
        "synthetic_family",
        [](int n_envs, int n_steps, std::uint64_t seed, const std::vector<double>& scales) {
            auto d = build_synthetic_family(n_envs, n_steps, seed, scales);
            py::list envs;
            for (const auto& e : d.envs) envs.append(py::make_tuple(e.inputs, e.next, e.reward));
            return envs;
        },
        py::arg("n_envs") = 3, py::arg("n_steps") = 1000, py::arg("seed") = 0,
        py::arg("intervention_scales") = std::vector<double>{3.0});
    m.def(
        "linear_misa",
        [](const std::vector<std::tuple<Eigen::MatrixXd, Eigen::MatrixXd, Eigen::VectorXd>>& envs, double alpha,
           const std::string& agg) {
            env_dataset d;
            for (const auto& [x, nx, r] : envs) d.envs.push_back({x, nx, r});
            aggregation a = agg == "largest" ? aggregation::largest : aggregation::intersection;
            if (agg != "largest" && agg != "intersection") throw invalid_argument("aggregation must be intersection or largest");
            return from_json(to_json(linear_misa(d, alpha, a)));
        },
        py::arg("envs"), py::arg("alpha") = 0.05, py::arg("aggregation") = "intersection");

    m.def("experiments", [] {
        std::vector<std::string> names;
        for (const auto& e : experiments()) names.push_back(e.name);
        return names;
    });
    m.def(
        "run_experiment",
        [](const std::string& name, std::uint64_t seed, const std::string& config_text, std::uint64_t rep) {
            const auto* def = find_experiment(name);
            if (!def) throw config_error("unknown experiment '" + name + "'");
            auto doc = config_document::parse(config_text);
            validate_config(doc);
            experiment_context ctx;
            ctx.config = resolve_config(*def, doc);
            ctx.seed = seed;
            ctx.rep = rep;
            ctx.index = experiment_index(name);
            experiment_result r;
            {
                py::gil_scoped_release release;
                r = def->run(ctx);
            }
            py::dict files;
            for (const auto& [f, text] : r.files) files[py::str(f)] = py::bytes(text);
            return py::make_tuple(files, from_json(r.derived));
        },
        py::arg("name"), py::arg("seed"), py::arg("config") = "", py::arg("rep") = 0);
}
