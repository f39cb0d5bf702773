#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "pm/mcts.hpp"
#include "pm/rng.hpp"

using namespace pm::mcts;
using pm::task::NodeAssignment;

namespace {

NodeAssignment assign(const std::string& subtask) {
    NodeAssignment a;
    a.subtask_id = subtask;
    return a;
}

// Deterministic self-play: expand where possible, otherwise descend, feeding
// rewards from a seeded generator. Subtask labels derive from tree size so an
// interrupted replay continues the same sequence.
void play(SearchTree& tree, std::mt19937_64& rng, int iterations, const UctParams& p) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < iterations; ++i) {
        const std::uint64_t leaf = tree.select_leaf(p);
        std::uint64_t target = leaf;
        if (tree.node(leaf).status != NodeStatus::Unvisited)
            target = tree.expand(leaf, assign("s" + std::to_string(tree.size() % 3)), NodeType::Draft);
        tree.backpropagate(target, unit(rng));
    }
}

} // namespace

TEST_CASE("uct score matches hand-evaluated references") {
    CHECK(uct_score(2.0, 4, 16, 1.414) == Catch::Approx(1.6772322201769845).epsilon(1e-12));
    CHECK(uct_score(2.0, 4, 16, 1.414) == Catch::Approx(1.6772).margin(5e-5));
    CHECK(std::isinf(uct_score(0.0, 0, 16, 1.414)));
    CHECK(std::isinf(uct_score(0.0, 0, 1, 0.0)));
    CHECK(uct_score(3.0, 3, 3, 0.0) == 1.0);
}

TEST_CASE("uct score monotonicity") {
    for (double q : {0.0, 0.4, 1.3, 2.0}) {
        CHECK(uct_score(q + 0.1, 4, 9, 1.0) > uct_score(q, 4, 9, 1.0));
        CHECK(uct_score(q, 4, 9, 1.0) > uct_score(q, 4, 3, 1.0));
    }
    // Fixed mean reward: more visits shrink the bonus.
    CHECK(uct_score(1.0, 2, 100, 1.0) > uct_score(2.0, 4, 100, 1.0));
    CHECK(uct_score(2.0, 4, 100, 1.0) > uct_score(4.0, 8, 100, 1.0));
}

TEST_CASE("selection walks to the highest-scoring expandable node") {
    SECTION("single root") {
        SearchTree t;
        CHECK(t.select_leaf({}) == t.root());
    }

    SECTION("unvisited child wins over any visited sibling") {
        SearchTree t(2);
        const auto a = t.expand(t.root(), assign("s1"), NodeType::Draft);
        t.backpropagate(a, 1.0);
        const auto b = t.expand(t.root(), assign("s1"), NodeType::Draft);
        CHECK(t.select_leaf({}) == b);
    }

    SECTION("hand-scored two-child comparison") {
        SearchTree t(2);
        const auto a = t.expand(t.root(), assign("s1"), NodeType::Draft);
        const auto b = t.expand(t.root(), assign("s1"), NodeType::Draft);
        t.backpropagate(a, 0.3);
        t.backpropagate(a, 0.3);
        t.backpropagate(a, 0.3);
        t.backpropagate(b, 0.5);
        REQUIRE(t.node(a).Q == Catch::Approx(0.9));
        REQUIRE(t.node(a).N == 3);
        REQUIRE(t.node(b).N == 1);
        REQUIRE(t.node(t.root()).N == 4);
        UctParams p;
        p.C = 1.0;
        CHECK(uct_score(t.node(b).Q, 1, 4, 1.0) == Catch::Approx(1.6774100225154747).epsilon(1e-12));
        CHECK(uct_score(t.node(a).Q, 3, 4, 1.0) == Catch::Approx(0.9797779934458726).epsilon(1e-12));
        CHECK(t.select_leaf(p) == b);
    }

    SECTION("a node below the branching limit is itself selectable") {
        SearchTree t(3);
        const auto a = t.expand(t.root(), assign("s1"), NodeType::Draft);
        t.backpropagate(a, 1.0);
        const auto b = t.expand(t.root(), assign("s1"), NodeType::Draft);
        t.backpropagate(b, 0.5);
        CHECK(t.select_leaf({}) == t.root());
    }

    SECTION("ties break toward the lowest id") {
        SearchTree t(2);
        const auto a = t.expand(t.root(), assign("s1"), NodeType::Draft);
        const auto b = t.expand(t.root(), assign("s1"), NodeType::Draft);
        t.backpropagate(a, 0.5);
        t.backpropagate(b, 0.5);
        CHECK(a < b);
        CHECK(t.select_leaf({}) == a);
    }

    SECTION("terminal branches are skipped and exhaustion is an error") {
        SearchTree t(1);
        const auto a = t.expand(t.root(), assign("s1"), NodeType::Draft);
        t.backpropagate(a, 0.2);
        t.backpropagate(t.root(), 0.1);
        t.mark_terminal(a);
        CHECK_THROWS_AS(t.select_leaf({}), pm::Error);
        try {
            t.select_leaf({});
        } catch (const pm::Error& e) {
            CHECK(e.kind() == "TreeFullyTerminal");
        }
    }

    SECTION("a full node with all-terminal children is closed and search restarts") {
        SearchTree t(1);
        const auto a = t.expand(t.root(), assign("s1"), NodeType::Draft);
        t.backpropagate(a, 0.2);
        const auto b = t.expand(a, assign("s1"), NodeType::Draft);
        t.backpropagate(b, 0.2);
        t.mark_terminal(b);
        CHECK_THROWS_AS(t.select_leaf({}), pm::Error);
        CHECK(t.node(a).status == NodeStatus::Terminal);
        CHECK(t.node(t.root()).status == NodeStatus::Terminal);
    }
}

TEST_CASE("argmax path is invariant under joint positive rescaling of Q and C") {
    UctParams p;
    p.C = 0.8;
    for (int trial = 0; trial < 20; ++trial) {
        auto build = [&](double scale) {
            UctParams q = p;
            q.C = p.C * scale;
            SearchTree u(2);
            std::mt19937_64 rng(1000 + trial);
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            for (int i = 0; i < 17; ++i) {
                const std::uint64_t leaf = u.select_leaf(q);
                std::uint64_t target = leaf;
                if (u.node(leaf).status != NodeStatus::Unvisited)
                    target = u.expand(leaf, assign("s" + std::to_string(i % 3)), NodeType::Draft);
                u.backpropagate(target, unit(rng) * scale);
            }
            return u.select_leaf(q);
        };
        CHECK(build(1.0) == build(3.5));
    }
}

TEST_CASE("expansion appends unvisited children and enforces the limit") {
    SearchTree t;
    const auto c = t.expand(t.root(), assign("s1"), NodeType::Draft);
    CHECK(t.node(c).parent == static_cast<std::int64_t>(t.root()));
    CHECK(t.node(c).N == 0);
    CHECK(t.node(c).Q == 0.0);
    CHECK(t.node(c).status == NodeStatus::Unvisited);
    CHECK(t.node(t.root()).children.size() == 1);

    const auto d = t.expand(t.root(), assign("s1"), NodeType::Debug);
    CHECK(t.node(d).node_type == NodeType::Debug);

    t.expand(t.root(), assign("s1"), NodeType::Improve);
    CHECK_THROWS_AS(t.expand(t.root(), assign("s1"), NodeType::Draft), pm::Error);
    try {
        t.expand(t.root(), assign("s1"), NodeType::Draft);
    } catch (const pm::Error& e) {
        CHECK(e.kind() == "BranchingLimitExceeded");
    }

    CHECK_THROWS_AS(t.expand(999, assign("s1"), NodeType::Draft), pm::Error);
    try {
        t.expand(999, assign("s1"), NodeType::Draft);
    } catch (const pm::Error& e) {
        CHECK(e.kind() == "UnknownParent");
    }
}

TEST_CASE("backpropagation updates exactly the root path") {
    SearchTree t;
    const auto a = t.expand(t.root(), assign("s1"), NodeType::Draft);
    t.backpropagate(a, 0.4);
    const auto b = t.expand(a, assign("s1"), NodeType::Draft);
    const auto sib = t.expand(t.root(), assign("s1"), NodeType::Draft);

    t.backpropagate(b, 1.0);
    CHECK(t.node(b).N == 1);
    CHECK(t.node(b).Q == 1.0);
    CHECK(t.node(a).N == 2);
    CHECK(t.node(a).Q == Catch::Approx(1.4));
    CHECK(t.node(t.root()).N == 2);
    CHECK(t.node(sib).N == 0);
    CHECK(t.node(b).status == NodeStatus::Evaluated);
    CHECK(t.total_simulations() == t.node(t.root()).N);

    const double q_before = t.node(t.root()).Q;
    t.backpropagate(b, 0.0);
    CHECK(t.node(t.root()).Q == q_before);
    CHECK(t.node(t.root()).N == 3);

    CHECK_THROWS_AS(t.backpropagate(12345, 0.5), pm::Error);
}

TEST_CASE("rewards through a shared root add up") {
    SearchTree t;
    const auto a = t.expand(t.root(), assign("s1"), NodeType::Draft);
    const auto b = t.expand(t.root(), assign("s1"), NodeType::Draft);
    t.backpropagate(a, 0.3);
    t.backpropagate(b, 0.7);
    CHECK(t.node(t.root()).Q == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(t.node(t.root()).N == 2);
}

TEST_CASE("root bookkeeping stays exact over many backpropagations") {
    SearchTree t(8);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double sum = 0.0;
    std::vector<std::uint64_t> leaves;
    for (int i = 0; i < 8; ++i) leaves.push_back(t.expand(t.root(), assign("s1"), NodeType::Draft));
    for (int k = 0; k < 500; ++k) {
        const double r = unit(rng);
        sum += r;
        t.backpropagate(leaves[static_cast<std::size_t>(k % 8)], r);
    }
    CHECK(t.node(t.root()).N == 500);
    CHECK(t.node(t.root()).Q == Catch::Approx(sum).margin(1e-12));
}

TEST_CASE("best trajectory follows the highest mean reward") {
    SECTION("single evaluated child") {
        SearchTree t;
        const auto a = t.expand(t.root(), assign("s1"), NodeType::Draft);
        t.backpropagate(a, 0.6);
        const auto path = t.best_trajectory();
        REQUIRE(path.size() == 2);
        CHECK(path[0] == t.root());
        CHECK(path[1] == a);
    }

    SECTION("mean beats visit count") {
        SearchTree t;
        const auto lo = t.expand(t.root(), assign("s1"), NodeType::Draft);
        const auto hi = t.expand(t.root(), assign("s1"), NodeType::Draft);
        t.backpropagate(lo, 0.6);
        t.backpropagate(lo, 0.6);
        t.backpropagate(lo, 0.6);
        t.backpropagate(hi, 0.9);
        const auto deeper = t.expand(hi, assign("s2"), NodeType::Draft);
        t.backpropagate(deeper, 0.9);
        const auto path = t.best_trajectory();
        REQUIRE(path.size() == 3);
        CHECK(path[1] == hi);
        CHECK(path[2] == deeper);
    }

    SECTION("unvisited children stop the walk") {
        SearchTree t;
        t.expand(t.root(), assign("s1"), NodeType::Draft);
        t.backpropagate(t.root(), 0.5);
        const auto path = t.best_trajectory();
        REQUIRE(path.size() == 1);
        CHECK(path[0] == t.root());
    }

    SECTION("no simulations is an error") {
        SearchTree t;
        t.expand(t.root(), assign("s1"), NodeType::Draft);
        CHECK_THROWS_AS(t.best_trajectory(), pm::Error);
        try {
            t.best_trajectory();
        } catch (const pm::Error& e) {
            CHECK(e.kind() == "NoEvaluatedNodes");
        }
    }
}

TEST_CASE("virtual losses steer concurrent selectors apart") {
    SearchTree t(2);
    const auto a = t.expand(t.root(), assign("s1"), NodeType::Draft);
    const auto b = t.expand(t.root(), assign("s1"), NodeType::Draft);
    t.backpropagate(a, 0.9);
    t.backpropagate(b, 0.8);
    UctParams p;
    p.C = 1.0;
    const auto first = t.select_leaf(p);
    VirtualLoss vl;
    vl[first] = 1;
    const auto second = t.select_leaf(p, &vl);
    CHECK(first != second);
}

TEST_CASE("checkpoints round-trip byte-identically") {
    SearchTree t(3);
    std::mt19937_64 rng(42);
    UctParams p;
    play(t, rng, 100, p);
    REQUIRE(t.size() >= 50);

    const std::string rng_state = pm::rng_to_string(rng);
    const std::string bytes = checkpoint_save(t, rng_state, "snapshot-abc");
    const Checkpoint cp = checkpoint_restore(bytes);

    CHECK(cp.version == 1);
    CHECK(cp.rng_state == rng_state);
    CHECK(cp.store_snapshot_ref == "snapshot-abc");
    REQUIRE(cp.tree.size() == t.size());
    CHECK(cp.tree.total_simulations() == t.total_simulations());
    for (std::uint64_t i = 0; i < t.size(); ++i) {
        const TreeNode& x = t.node(i);
        const TreeNode& y = cp.tree.node(i);
        CHECK(x.id == y.id);
        CHECK(x.parent == y.parent);
        CHECK(x.children == y.children);
        CHECK(x.Q == y.Q);
        CHECK(x.N == y.N);
        CHECK(x.node_type == y.node_type);
        CHECK(x.status == y.status);
        CHECK(x.assignment.subtask_id == y.assignment.subtask_id);
        CHECK(x.output_summary == y.output_summary);
    }
    CHECK(checkpoint_save(cp.tree, cp.rng_state, cp.store_snapshot_ref) == bytes);
}

TEST_CASE("corrupt and mismatched checkpoints are rejected") {
    SearchTree t;
    const auto a = t.expand(t.root(), assign("s1"), NodeType::Draft);
    t.backpropagate(a, 0.5);
    const std::string bytes = checkpoint_save(t, "rngstate", "");

    SECTION("truncated file") {
        const std::string cut = bytes.substr(0, bytes.size() / 2);
        CHECK_THROWS_AS(checkpoint_restore(cut), pm::Error);
        try {
            checkpoint_restore(cut);
        } catch (const pm::Error& e) {
            CHECK(e.kind() == "CorruptCheckpoint");
            CHECK(e.category() == pm::ErrorCategory::Checkpoint);
        }
    }

    SECTION("flipped payload byte fails the checksum") {
        std::string bad = bytes;
        bad[10] = static_cast<char>(bad[10] ^ 0x40);
        CHECK_THROWS_AS(checkpoint_restore(bad), pm::Error);
        try {
            checkpoint_restore(bad);
        } catch (const pm::Error& e) {
            CHECK(e.kind() == "CorruptCheckpoint");
        }
    }

    SECTION("version bump is reported as a mismatch") {
        std::string bad = bytes;
        bad[4] = 2;  // little-endian version field
        const std::string body = bad.substr(0, bad.size() - 4);
        const std::uint32_t crc = pm::crc32(body.data(), body.size());
        for (int i = 0; i < 4; ++i)
            bad[bad.size() - 4 + static_cast<std::size_t>(i)] = static_cast<char>((crc >> (8 * i)) & 0xff);
        CHECK_THROWS_AS(checkpoint_restore(bad), pm::Error);
        try {
            checkpoint_restore(bad);
        } catch (const pm::Error& e) {
            CHECK(e.kind() == "VersionMismatch");
        }
    }

    SECTION("wrong magic") {
        std::string bad = bytes;
        bad[0] = 'X';
        const std::string body = bad.substr(0, bad.size() - 4);
        const std::uint32_t crc = pm::crc32(body.data(), body.size());
        for (int i = 0; i < 4; ++i)
            bad[bad.size() - 4 + static_cast<std::size_t>(i)] = static_cast<char>((crc >> (8 * i)) & 0xff);
        CHECK_THROWS_AS(checkpoint_restore(bad), pm::Error);
    }
}

TEST_CASE("interrupted runs resume to the identical trajectory") {
    UctParams p;
    SearchTree full(3);
    std::mt19937_64 rng_full(2026);
    play(full, rng_full, 100, p);

    SearchTree half(3);
    std::mt19937_64 rng_half(2026);
    play(half, rng_half, 50, p);
    const std::string bytes = checkpoint_save(half, pm::rng_to_string(rng_half), "");

    Checkpoint cp = checkpoint_restore(bytes);
    std::mt19937_64 resumed = pm::rng_from_string(cp.rng_state);
    play(cp.tree, resumed, 50, p);

    CHECK(cp.tree.size() == full.size());
    CHECK(cp.tree.total_simulations() == full.total_simulations());
    CHECK(cp.tree.best_trajectory() == full.best_trajectory());
    CHECK(checkpoint_save(cp.tree, pm::rng_to_string(resumed), "") ==
          checkpoint_save(full, pm::rng_to_string(rng_full), ""));
}

TEST_CASE("diagnostic json dump carries the whole tree") {
    SearchTree t;
    const auto a = t.expand(t.root(), assign("s1"), NodeType::Improve);
    t.backpropagate(a, 0.25);
    const auto j = to_json(t);
    CHECK(j["total_simulations"] == 1);
    CHECK(j["nodes"].size() == 2);
    CHECK(j["nodes"][1]["node_type"] == "Improve");
    CHECK(j["nodes"][1]["subtask_id"] == "s1");
}
