#pragma once

// Dynamic consensus graph: a weighted DAG of hypotheses and the counter-evidence
// raised against them. Falsification edges run hypothesis -> evidence and carry
// the attack strength; rectification edges run evidence -> revised hypothesis and
// carry the proponent's stated confidence.

#include "falsify/vfm.hpp"

#include <nlohmann/json_fwd.hpp>

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

namespace falsify {

using NodeId = std::string;

enum class NodeKind { Hypothesis, Evidence };
enum class EdgeKind { Falsification, Rectification };

std::string_view to_string(NodeKind k) noexcept;
std::string_view to_string(EdgeKind k) noexcept;

struct HypothesisNode {
    NodeId id;
    std::string text;
    std::string label;  // normalized form of text; filled in on insertion when empty
    int turn = 0;
    std::optional<Embedding> embedding;  // unit norm when present
};

struct EvidenceNode {
    NodeId id;
    std::string text;
    std::vector<std::size_t> region_indices;
    double attack_strength = 0.0;
    int turn = 1;
};

struct WeightedEdge {
    NodeId src;
    NodeId dst;
    EdgeKind kind = EdgeKind::Falsification;
    double weight = 1.0;
};

using Node = std::variant<HypothesisNode, EvidenceNode>;

struct Diagnosis {
    NodeId winner;
    double confidence = 0.0;
};

/// Similarity between two hypothesis texts, in [-1, 1].
using TextSimilarity = std::function<double(std::string_view, std::string_view)>;

inline constexpr double kMinEdgeWeight = 1e-6;
inline constexpr double kDefaultAttackThreshold = 0.3;
inline constexpr double kDefaultSimilarityThreshold = 0.8;

class ConsensusGraph {
public:
    /// Graph containing only the root hypothesis. Evidence below attack_threshold is refused.
    explicit ConsensusGraph(HypothesisNode root, double attack_threshold = kDefaultAttackThreshold);

    /// Adds evidence below a leaf hypothesis and the revision it prompted.
    void expand(const NodeId& h_prev, EvidenceNode e, HypothesisNode h_new, double w_rect);

    // Lower-level building blocks; expand() is add_evidence() + add_revision() with a leaf check.
    void add_evidence(const NodeId& h_from, EvidenceNode e);
    void add_revision(const NodeId& e_from, HypothesisNode h_new, double w_rect);
    /// Rectification edge into an existing hypothesis; refused if it would close a cycle.
    void link_revision(const NodeId& e_from, const NodeId& h_to, double w_rect);

    [[nodiscard]] bool is_semantic_duplicate(std::string_view text, double theta_sim,
                                             const TextSimilarity& sim) const;

    /// Hypotheses without an outgoing falsification edge, in insertion order.
    [[nodiscard]] std::vector<NodeId> leaf_hypotheses() const;

    /// Sum over root->h paths of the geometric mean of edge weights; 1 for the root.
    [[nodiscard]] double credibility(const NodeId& h) const;

    /// Argmax of credibility over leaves; ties go to the later turn, then the smaller id.
    [[nodiscard]] Diagnosis final_diagnosis() const;

    /// Root->h path with the largest geometric mean, nodes interleaved hypothesis/evidence.
    [[nodiscard]] std::vector<NodeId> winning_path(const NodeId& h) const;

    [[nodiscard]] std::vector<NodeId> topological_order() const;

    [[nodiscard]] const NodeId& root() const noexcept { return root_; }
    [[nodiscard]] double attack_threshold() const noexcept { return attack_threshold_; }
    [[nodiscard]] const std::vector<Node>& nodes() const noexcept { return nodes_; }
    [[nodiscard]] const std::vector<WeightedEdge>& edges() const noexcept { return edges_; }
    [[nodiscard]] bool contains(const NodeId& id) const { return index_.contains(id); }
    [[nodiscard]] const Node& node(const NodeId& id) const;
    [[nodiscard]] const HypothesisNode& hypothesis(const NodeId& id) const;
    [[nodiscard]] const EvidenceNode& evidence(const NodeId& id) const;
    [[nodiscard]] std::size_t hypothesis_count() const;

    [[nodiscard]] nlohmann::json to_json() const;
    static ConsensusGraph from_json(const nlohmann::json& j, double attack_threshold = 0.0);

private:
    ConsensusGraph() = default;

    void insert_node(Node n);
    std::size_t index_of(const NodeId& id) const;
    bool reaches(const NodeId& from, const NodeId& to) const;
    double checked_weight(double w, const char* what) const;

    NodeId root_;
    double attack_threshold_ = kDefaultAttackThreshold;
    std::vector<Node> nodes_;
    std::vector<WeightedEdge> edges_;
    std::unordered_map<NodeId, std::size_t> index_;
    std::unordered_map<NodeId, std::vector<std::size_t>> out_;  // node -> edge indices
    std::unordered_map<NodeId, std::vector<std::size_t>> in_;
};

inline ConsensusGraph init_graph(HypothesisNode h0, double attack_threshold = kDefaultAttackThreshold) {
    return ConsensusGraph(std::move(h0), attack_threshold);
}

const NodeId& node_id(const Node& n);
const std::string& node_text(const Node& n);

}  // namespace falsify
