#include "falsify/consensus_graph.hpp"

#include "falsify/error.hpp"
#include "falsify/log.hpp"
#include "falsify/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <unordered_set>

namespace falsify {

namespace {

struct PathSignature {
    std::size_t length;
    double log_weight;
};

bool is_hypothesis(const Node& n) { return std::holds_alternative<HypothesisNode>(n); }

void check_embedding(const HypothesisNode& h) {
    if (!h.embedding) return;
    double sq = 0.0;
    for (double x : *h.embedding) sq += x * x;
    require(std::abs(std::sqrt(sq) - 1.0) <= 1e-6, "hypothesis " + h.id + " embedding is not unit norm");
}

}  // namespace

std::string_view to_string(NodeKind k) noexcept { return k == NodeKind::Hypothesis ? "hypothesis" : "evidence"; }

std::string_view to_string(EdgeKind k) noexcept {
    return k == EdgeKind::Falsification ? "falsification" : "rectification";
}

const NodeId& node_id(const Node& n) {
    return std::visit([](const auto& x) -> const NodeId& { return x.id; }, n);
}

const std::string& node_text(const Node& n) {
    return std::visit([](const auto& x) -> const std::string& { return x.text; }, n);
}

ConsensusGraph::ConsensusGraph(HypothesisNode root, double attack_threshold) : attack_threshold_(attack_threshold) {
    require(root.turn == 0, "root hypothesis must have turn 0, got " + std::to_string(root.turn));
    require(attack_threshold >= 0.0 && attack_threshold < 1.0, "attack threshold outside [0,1)");
    root_ = root.id;
    insert_node(std::move(root));
}

void ConsensusGraph::insert_node(Node n) {
    const auto& id = node_id(n);
    require(!id.empty(), "node id is empty");
    require(!index_.contains(id), "node id " + id + " already present", Errc::DuplicateNode);
    if (auto* h = std::get_if<HypothesisNode>(&n)) {
        check_embedding(*h);
        if (h->label.empty()) h->label = text::normalize_label(h->text);
    }
    index_.emplace(id, nodes_.size());
    nodes_.push_back(std::move(n));
}

std::size_t ConsensusGraph::index_of(const NodeId& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error(Errc::UnknownNode, "no node " + id);
    return it->second;
}

const Node& ConsensusGraph::node(const NodeId& id) const { return nodes_[index_of(id)]; }

const HypothesisNode& ConsensusGraph::hypothesis(const NodeId& id) const {
    const auto* h = std::get_if<HypothesisNode>(&node(id));
    require(h != nullptr, id + " is not a hypothesis");
    return *h;
}

const EvidenceNode& ConsensusGraph::evidence(const NodeId& id) const {
    const auto* e = std::get_if<EvidenceNode>(&node(id));
    require(e != nullptr, id + " is not evidence");
    return *e;
}

std::size_t ConsensusGraph::hypothesis_count() const {
    return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), is_hypothesis));
}

double ConsensusGraph::checked_weight(double w, const char* what) const {
    if (!(w > 0.0)) throw Error(Errc::ZeroWeight, std::string(what) + " weight must be > 0");
    require(w <= 1.0, std::string(what) + " weight " + std::to_string(w) + " exceeds 1");
    if (w < kMinEdgeWeight) {
        log().warn("{} weight {} clamped to {}", what, w, kMinEdgeWeight);
        return kMinEdgeWeight;
    }
    return w;
}

void ConsensusGraph::add_evidence(const NodeId& h_from, EvidenceNode e) {
    (void)hypothesis(h_from);
    require(e.turn >= 1, "evidence turn must be >= 1");
    require(!e.region_indices.empty(), "evidence " + e.id + " references no regions", Errc::EmptyRegion);
    require(e.attack_strength >= 0.0 && e.attack_strength <= 1.0, "attack strength outside [0,1]");
    require(e.attack_strength >= attack_threshold_,
            "attack strength " + std::to_string(e.attack_strength) + " below threshold " +
                std::to_string(attack_threshold_));
    const double w = checked_weight(e.attack_strength, "falsification");
    require(!index_.contains(e.id), "node id " + e.id + " already present", Errc::DuplicateNode);

    WeightedEdge edge{h_from, e.id, EdgeKind::Falsification, w};
    insert_node(std::move(e));
    out_[edge.src].push_back(edges_.size());
    in_[edge.dst].push_back(edges_.size());
    edges_.push_back(std::move(edge));
}

void ConsensusGraph::add_revision(const NodeId& e_from, HypothesisNode h_new, double w_rect) {
    (void)evidence(e_from);
    require(h_new.turn >= 1, "revised hypothesis must have turn >= 1");
    const double w = checked_weight(w_rect, "rectification");
    require(!index_.contains(h_new.id), "node id " + h_new.id + " already present", Errc::DuplicateNode);

    WeightedEdge edge{e_from, h_new.id, EdgeKind::Rectification, w};
    insert_node(std::move(h_new));
    out_[edge.src].push_back(edges_.size());
    in_[edge.dst].push_back(edges_.size());
    edges_.push_back(std::move(edge));
}

void ConsensusGraph::link_revision(const NodeId& e_from, const NodeId& h_to, double w_rect) {
    (void)evidence(e_from);
    (void)hypothesis(h_to);
    require(h_to != root_, "root cannot receive edges");
    const double w = checked_weight(w_rect, "rectification");
    if (reaches(h_to, e_from)) throw Error(Errc::CycleDetected, e_from + " -> " + h_to + " closes a cycle");
    WeightedEdge edge{e_from, h_to, EdgeKind::Rectification, w};
    out_[edge.src].push_back(edges_.size());
    in_[edge.dst].push_back(edges_.size());
    edges_.push_back(std::move(edge));
}

void ConsensusGraph::expand(const NodeId& h_prev, EvidenceNode e, HypothesisNode h_new, double w_rect) {
    (void)hypothesis(h_prev);
    const auto leaves = leaf_hypotheses();
    if (std::find(leaves.begin(), leaves.end(), h_prev) == leaves.end())
        throw Error(Errc::NotALeaf, h_prev + " already has counter-evidence");
    // Validate the rectification weight before mutating so a bad call leaves the graph untouched.
    checked_weight(w_rect, "rectification");
    require(h_new.turn >= 1, "revised hypothesis must have turn >= 1");
    require(!index_.contains(h_new.id) && h_new.id != e.id, "node id " + h_new.id + " already present",
            Errc::DuplicateNode);
    check_embedding(h_new);
    const auto e_id = e.id;
    add_evidence(h_prev, std::move(e));
    add_revision(e_id, std::move(h_new), w_rect);
}

bool ConsensusGraph::reaches(const NodeId& from, const NodeId& to) const {
    std::vector<NodeId> stack{from};
    std::unordered_set<NodeId> seen;
    while (!stack.empty()) {
        auto cur = std::move(stack.back());
        stack.pop_back();
        if (cur == to) return true;
        if (!seen.insert(cur).second) continue;
        if (auto it = out_.find(cur); it != out_.end())
            for (auto ei : it->second) stack.push_back(edges_[ei].dst);
    }
    return false;
}

bool ConsensusGraph::is_semantic_duplicate(std::string_view text, double theta_sim, const TextSimilarity& sim) const {
    require(theta_sim > 0.0 && theta_sim < 1.0, "theta_sim outside (0,1)");
    for (const auto& n : nodes_) {
        const auto* h = std::get_if<HypothesisNode>(&n);
        if (h != nullptr && sim(text, h->text) > theta_sim) return true;
    }
    return false;
}

std::vector<NodeId> ConsensusGraph::leaf_hypotheses() const {
    std::vector<NodeId> leaves;
    for (const auto& n : nodes_) {
        if (!is_hypothesis(n)) continue;
        const auto& id = node_id(n);
        auto it = out_.find(id);
        const bool has_falsification =
            it != out_.end() && std::any_of(it->second.begin(), it->second.end(), [&](std::size_t ei) {
                return edges_[ei].kind == EdgeKind::Falsification;
            });
        if (!has_falsification) leaves.push_back(id);
    }
    return leaves;
}

std::vector<NodeId> ConsensusGraph::topological_order() const {
    std::unordered_map<NodeId, std::size_t> indegree;
    for (const auto& n : nodes_) indegree[node_id(n)] = 0;
    for (const auto& e : edges_) ++indegree[e.dst];
    // Kahn's algorithm, seeded in insertion order for a stable result.
    std::queue<NodeId> ready;
    for (const auto& n : nodes_)
        if (indegree[node_id(n)] == 0) ready.push(node_id(n));
    std::vector<NodeId> order;
    while (!ready.empty()) {
        auto id = ready.front();
        ready.pop();
        order.push_back(id);
        if (auto it = out_.find(id); it != out_.end())
            for (auto ei : it->second)
                if (--indegree[edges_[ei].dst] == 0) ready.push(edges_[ei].dst);
    }
    if (order.size() != nodes_.size()) throw Error(Errc::CycleDetected, "graph contains a cycle");
    return order;
}

double ConsensusGraph::credibility(const NodeId& h) const {
    (void)hypothesis(h);
    if (h == root_) return 1.0;

    // Propagate (length, sum of log weights) for every root->v path in topological order.
    std::unordered_map<NodeId, std::vector<PathSignature>> paths;
    paths[root_].push_back({0, 0.0});
    for (const auto& id : topological_order()) {
        auto it = paths.find(id);
        if (it == paths.end()) continue;
        auto oit = out_.find(id);
        if (oit == out_.end()) continue;
        for (auto ei : oit->second) {
            const auto& e = edges_[ei];
            auto& dst = paths[e.dst];
            const double lw = std::log(e.weight);
            for (const auto& sig : paths[id]) dst.push_back({sig.length + 1, sig.log_weight + lw});
        }
    }

    auto it = paths.find(h);
    if (it == paths.end() || it->second.empty()) throw Error(Errc::Unreachable, h + " is not reachable from root");
    double phi = 0.0;
    for (const auto& sig : it->second) phi += std::exp(sig.log_weight / static_cast<double>(sig.length));
    return phi;
}

Diagnosis ConsensusGraph::final_diagnosis() const {
    const auto leaves = leaf_hypotheses();
    require(!leaves.empty(), "graph has no leaf hypotheses");
    std::vector<double> phi;
    phi.reserve(leaves.size());
    for (const auto& id : leaves) phi.push_back(credibility(id));

    std::size_t best = 0;
    for (std::size_t i = 1; i < leaves.size(); ++i) {
        const double scale = std::max(phi[i], phi[best]);
        const bool tie = std::abs(phi[i] - phi[best]) <= 1e-12 * scale;
        if (!tie) {
            if (phi[i] > phi[best]) best = i;
            continue;
        }
        const auto& a = hypothesis(leaves[i]);
        const auto& b = hypothesis(leaves[best]);
        if (a.turn > b.turn || (a.turn == b.turn && a.id < b.id)) best = i;
    }
    const double total = std::accumulate(phi.begin(), phi.end(), 0.0);
    return {leaves[best], phi[best] / total};
}

std::vector<NodeId> ConsensusGraph::winning_path(const NodeId& h) const {
    (void)hypothesis(h);
    if (h == root_) return {root_};

    std::vector<NodeId> best_path;
    double best_score = -1.0;
    std::vector<NodeId> path{root_};
    double log_sum = 0.0;

    // Depth-first over out-edges in insertion order; first path wins on exact ties.
    std::function<void(const NodeId&)> walk = [&](const NodeId& cur) {
        if (cur == h) {
            const double score = std::exp(log_sum / static_cast<double>(path.size() - 1));
            if (score > best_score) {
                best_score = score;
                best_path = path;
            }
            return;
        }
        auto it = out_.find(cur);
        if (it == out_.end()) return;
        for (auto ei : it->second) {
            const auto& e = edges_[ei];
            path.push_back(e.dst);
            log_sum += std::log(e.weight);
            walk(e.dst);
            log_sum -= std::log(e.weight);
            path.pop_back();
        }
    };
    walk(root_);
    if (best_path.empty()) throw Error(Errc::Unreachable, h + " is not reachable from root");
    return best_path;
}

nlohmann::json ConsensusGraph::to_json() const {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : nodes_) {
        std::visit(
            [&](const auto& x) {
                nlohmann::json o{{"id", x.id}, {"text", x.text}, {"turn", x.turn}};
                if constexpr (std::is_same_v<std::decay_t<decltype(x)>, HypothesisNode>) {
                    o["kind"] = "hypothesis";
                } else {
                    o["kind"] = "evidence";
                    o["attack_strength"] = x.attack_strength;
                    o["region_indices"] = x.region_indices;
                }
                nodes.push_back(std::move(o));
            },
            n);
    }
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : edges_)
        edges.push_back({{"src", e.src}, {"dst", e.dst}, {"kind", to_string(e.kind)}, {"weight", e.weight}});
    return {{"root", root_}, {"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
}

ConsensusGraph ConsensusGraph::from_json(const nlohmann::json& j, double attack_threshold) {
    try {
        ConsensusGraph g;
        g.attack_threshold_ = attack_threshold;
        g.root_ = j.at("root").get<std::string>();
        for (const auto& n : j.at("nodes")) {
            const auto kind = n.at("kind").get<std::string>();
            if (kind == "hypothesis") {
                g.insert_node(HypothesisNode{n.at("id").get<std::string>(), n.at("text").get<std::string>(), {},
                                             n.at("turn").get<int>(), std::nullopt});
            } else if (kind == "evidence") {
                g.insert_node(EvidenceNode{n.at("id").get<std::string>(), n.at("text").get<std::string>(),
                                           n.at("region_indices").get<std::vector<std::size_t>>(),
                                           n.at("attack_strength").get<double>(), n.at("turn").get<int>()});
            } else {
                throw Error(Errc::SchemaError, "unknown node kind " + kind);
            }
        }
        require(g.hypothesis(g.root_).turn == 0, "root hypothesis must have turn 0");
        for (const auto& e : j.at("edges")) {
            WeightedEdge edge{e.at("src").get<std::string>(), e.at("dst").get<std::string>(),
                              e.at("kind").get<std::string>() == "falsification" ? EdgeKind::Falsification
                                                                                 : EdgeKind::Rectification,
                              0.0};
            edge.weight = g.checked_weight(e.at("weight").get<double>(), "imported");
            if (edge.kind == EdgeKind::Falsification) {
                (void)g.hypothesis(edge.src);
                (void)g.evidence(edge.dst);
            } else {
                (void)g.evidence(edge.src);
                (void)g.hypothesis(edge.dst);
            }
            if (g.reaches(edge.dst, edge.src))
                throw Error(Errc::CycleDetected, edge.src + " -> " + edge.dst + " closes a cycle");
            g.out_[edge.src].push_back(g.edges_.size());
            g.in_[edge.dst].push_back(g.edges_.size());
            g.edges_.push_back(std::move(edge));
        }
        require(!g.in_.contains(g.root_), "root has incoming edges");
        for (const auto& n : g.nodes_) {
            if (is_hypothesis(n)) continue;
            auto it = g.in_.find(node_id(n));
            require(it != g.in_.end() && it->second.size() == 1,
                    "evidence " + node_id(n) + " needs exactly one falsification edge");
        }
        return g;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::SchemaError, e.what());
    }
}

}  // namespace falsify
