#include "falsify/cli.hpp"
#include "falsify/config.hpp"
#include "falsify/consensus_graph.hpp"
#include "falsify/error.hpp"
#include "falsify/eval.hpp"
#include "falsify/orchestrator.hpp"
#include "falsify/vfm.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace falsify;

namespace {

PatchGrid grid_from(const std::vector<std::vector<double>>& patches, std::size_t rows, std::size_t cols) {
    if (rows == 0 && cols == 0) {
        rows = 1;
        cols = patches.size();
    }
    PatchGrid g{rows, cols, patches};
    g.validate();
    return g;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Falsification-driven debate engine";

    static py::exception<Error> exc(m, "FalsifyError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            PyErr_SetString(exc.ptr(), e.what());
        }
    });

    m.def(
        "falsification_attention",
        [](const std::vector<double>& probe, const std::vector<std::vector<double>>& patches, double tau,
           std::size_t rows, std::size_t cols) {
            return falsification_attention(probe, grid_from(patches, rows, cols), tau).alphas;
        },
        py::arg("probe"), py::arg("patches"), py::arg("tau") = kDefaultTemperature, py::arg("rows") = 0,
        py::arg("cols") = 0);

    m.def(
        "top_k_regions",
        [](const std::vector<double>& alphas, std::size_t k) {
            return top_k_regions(FalsificationAttentionMap::from_alphas(alphas), k);
        },
        py::arg("alphas"), py::arg("k"));

    m.def(
        "attack_strength",
        [](const std::vector<double>& alphas, const std::vector<std::size_t>& regions) {
            return attack_strength(FalsificationAttentionMap::from_alphas(alphas), regions);
        },
        py::arg("alphas"), py::arg("regions"));

    m.def(
        "cfg_loss",
        [](const std::vector<double>& alphas_p, const std::vector<double>& alphas_f,
           const std::vector<std::size_t>& b_p, const std::vector<std::size_t>& b_o, double tau, double lambda_p,
           double lambda_o) {
            CfgLossInputs in{FalsificationAttentionMap::from_alphas(alphas_p),
                             FalsificationAttentionMap::from_alphas(alphas_f), {b_p}, {b_o}, tau, lambda_p, lambda_o};
            const auto l = cfg_loss(in);
            return py::dict(py::arg("l_cfg") = l.l_cfg, py::arg("l_p") = l.l_p, py::arg("l_o") = l.l_o);
        },
        py::arg("alphas_p"), py::arg("alphas_f"), py::arg("b_p"), py::arg("b_o"), py::arg("tau") = 1.0,
        py::arg("lambda_p") = 1.0, py::arg("lambda_o") = 1.0);

    m.def(
        "graph_scores",
        [](const std::string& graph_json) {
            const auto g = ConsensusGraph::from_json(nlohmann::json::parse(graph_json));
            py::dict cred;
            for (const auto& n : g.nodes())
                if (std::holds_alternative<HypothesisNode>(n)) cred[py::str(node_id(n))] = g.credibility(node_id(n));
            const auto d = g.final_diagnosis();
            return py::dict(py::arg("credibility") = cred, py::arg("winner") = d.winner,
                            py::arg("confidence") = d.confidence, py::arg("winning_path") = g.winning_path(d.winner));
        },
        py::arg("graph_json"), "Credibility of every hypothesis and the final diagnosis of a serialized graph.");

    m.def(
        "chair",
        [](const std::vector<std::string>& explanations, const std::vector<std::vector<std::string>>& gt_findings,
           const std::string& lexicon_json) {
            const auto lex = FindingLexicon::from_json(nlohmann::json::parse(lexicon_json));
            std::vector<DatasetRecord> records;
            for (std::size_t i = 0; i < gt_findings.size(); ++i) {
                DatasetRecord r;
                r.case_id = std::to_string(i);
                r.answer = "-";
                r.gt_findings = gt_findings[i];
                records.push_back(std::move(r));
            }
            const auto c = chair_metrics(explanations, records, lex);
            return py::dict(py::arg("chair_s") = c.chair_s, py::arg("chair_i") = c.chair_i,
                            py::arg("chair_i_undefined") = c.chair_i_undefined);
        },
        py::arg("explanations"), py::arg("gt_findings"), py::arg("lexicon_json"));

    m.def(
        "run_debate",
        [](const std::string& config_path, const std::string& record_json) {
            const auto cfg = load_config(config_path);
            auto record = record_from_json(nlohmann::json::parse(record_json));
            const auto res = build_resources(cfg);
            DebateOutcome out;
            {
                py::gil_scoped_release release;
                out = run_debate(record.to_input(), cfg.debate, res);
            }
            return out.trail_document().dump();
        },
        py::arg("config_path"), py::arg("record_json"), "Runs one debate and returns the trail document as JSON.");

    m.def(
        "cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out;
            int code = 0;
            {
                py::gil_scoped_release release;
                code = cli::run(args, out);
            }
            return py::make_tuple(code, out.str());
        },
        py::arg("args"), "Runs the command-line interface in-process; returns (exit_code, stdout).");
}
