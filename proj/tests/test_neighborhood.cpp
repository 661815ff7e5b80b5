#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "nt/neighborhood.hpp"
#include "nt/rng.hpp"
#include "nt/synthgen.hpp"

using namespace nt;

namespace {

std::vector<std::vector<double>> random_embeddings(int m, int d, std::uint64_t seed) {
    Rng rng(seed, "emb");
    std::vector<std::vector<double>> out(static_cast<std::size_t>(m));
    for (auto& e : out) {
        e.resize(static_cast<std::size_t>(d));
        for (double& v : e) v = rng.normal();
    }
    return out;
}

// O(M^2) reference: full similarity matrix, then sort each row.
NeighborIndex brute_force(const std::vector<std::vector<double>>& embeddings, int n) {
    NeighborIndex index;
    index.neighborhood_size = n;
    int m = static_cast<int>(embeddings.size());
    for (int i = 0; i < m; ++i) {
        std::vector<std::pair<int, double>> row;
        for (int j = 0; j < m; ++j) {
            if (j == i) continue;
            row.emplace_back(j, similarity(embeddings[static_cast<std::size_t>(i)],
                                           embeddings[static_cast<std::size_t>(j)]));
        }
        std::stable_sort(row.begin(), row.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        row.resize(static_cast<std::size_t>(n));
        index.entries.push_back(std::move(row));
    }
    return index;
}

SparseDataset tiny_dataset(int m) {
    SparseDataset ds;
    ds.task = TaskKind::Multiclass;
    ds.input_dim = 2;
    ds.num_labels = 3;
    for (int i = 0; i < m; ++i) {
        ds.features.push_back({static_cast<double>(i), 1.0});
        ds.train_annotations.push_back({{i % 3}});
        ds.full_annotations.push_back({{i % 3}});
        ds.true_posterior.push_back({1.0, 0.0, 0.0});
        ds.split.push_back(0);
    }
    return ds;
}

}  // namespace

TEST_CASE("similarity identities and clamping") {
    std::vector<double> u{0.6, -0.8};
    CHECK(similarity(u, u) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(similarity({1.0, 0.0}, {0.0, 1.0}) == 0.0);
    std::vector<double> neg{-0.6, 0.8};
    CHECK(similarity(u, neg) == 0.0);  // cos = -1 clamps to 0
    CHECK_THROWS_AS(similarity({0.0, 0.0}, u), std::domain_error);
}

TEST_CASE("differentiable similarity matches the scalar kernel") {
    Rng rng(6, "sim");
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> a(4), b(4);
        for (double& v : a) v = rng.normal();
        for (double& v : b) v = rng.normal();
        Graph g;
        Tensor k = similarity(g.constant({4}, a), g.constant({4}, b));
        CHECK(k.scalar() == doctest::Approx(similarity(a, b)).epsilon(1e-12));
        CHECK(k.scalar() >= 0.0);
        CHECK(k.scalar() <= 1.0 + 1e-15);
    }
}

TEST_CASE("build_index hand case") {
    std::vector<std::vector<double>> e{{1.0, 0.0}, {0.8, 0.6}, {0.0, 1.0}};
    NeighborIndex index = build_index(e, 1);
    REQUIRE(index.size() == 3);
    CHECK(index.entries[0][0].first == 1);
    CHECK(index.entries[0][0].second == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(index.entries[1][0].first == 0);
    CHECK(index.entries[1][0].second == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(index.entries[2][0].first == 1);
    CHECK(index.entries[2][0].second == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("N = M-1 lists every other example") {
    auto e = random_embeddings(7, 3, 44);
    NeighborIndex index = build_index(e, 6);
    for (int i = 0; i < 7; ++i) {
        std::vector<int> seen;
        for (auto& [id, k] : index.entries[static_cast<std::size_t>(i)]) {
            CHECK(id != i);
            CHECK(k >= 0.0);
            CHECK(k <= 1.0 + 1e-15);
            seen.push_back(id);
        }
        std::sort(seen.begin(), seen.end());
        CHECK(static_cast<int>(seen.size()) == 6);
        CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
    }
}

TEST_CASE("duplicate embeddings tie-break toward the lower id") {
    std::vector<std::vector<double>> e{{1.0, 0.0}, {1.0, 0.0}, {1.0, 0.0}};
    NeighborIndex index = build_index(e, 2);
    CHECK(index.entries[0][0].first == 1);
    CHECK(index.entries[0][1].first == 2);
    CHECK(index.entries[1][0].first == 0);
    CHECK(index.entries[2][0].first == 0);
}

TEST_CASE("build_index matches the brute-force oracle") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        auto e = random_embeddings(60, 5, seed);
        NeighborIndex fast = build_index(e, 4, 17);
        NeighborIndex slow = brute_force(e, 4);
        CHECK(fast.version == 17);
        for (int i = 0; i < 60; ++i) {
            auto idx = static_cast<std::size_t>(i);
            REQUIRE(fast.entries[idx].size() == slow.entries[idx].size());
            for (std::size_t r = 0; r < fast.entries[idx].size(); ++r) {
                CHECK(fast.entries[idx][r].first == slow.entries[idx][r].first);
                CHECK(fast.entries[idx][r].second ==
                      doctest::Approx(slow.entries[idx][r].second).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("build_index range checks") {
    auto e = random_embeddings(4, 2, 5);
    CHECK_THROWS_AS(build_index(e, 0), std::invalid_argument);
    CHECK_THROWS_AS(build_index(e, 4), std::invalid_argument);
}

TEST_CASE("refresh: boundary rebuild, off-boundary no-op, frozen policy") {
    auto e1 = random_embeddings(8, 3, 100);
    auto e2 = random_embeddings(8, 3, 101);
    RefreshPolicy policy{10, 3, true};

    NeighborIndex base = build_index(e1, 3, 0);
    NeighborIndex off = refresh(base, e2, 15, policy);
    CHECK(off.version == base.version);  // untouched off the boundary
    CHECK(off.entries == base.entries);

    NeighborIndex on = refresh(base, e2, 20, policy);
    CHECK(on.version == 20);
    CHECK(on.entries == build_index(e2, 3, 20).entries);

    // Idempotence: same embeddings on a boundary reproduce the same lists.
    NeighborIndex again = refresh(on, e2, 30, policy);
    CHECK(again.entries == on.entries);

    RefreshPolicy frozen{10, 3, false};
    NeighborIndex still = refresh(base, e2, 20, frozen);
    CHECK(still.entries == base.entries);
}

TEST_CASE("assemble_batch materializes B x (1 + N) pairings") {
    SparseDataset ds = tiny_dataset(6);
    auto e = random_embeddings(6, 3, 9);
    RefreshPolicy policy{100, 3, true};
    NeighborIndex index = build_index(e, 3, 0);
    Batch batch = assemble_batch(ds, index, {0, 4}, 50, policy);
    REQUIRE(batch.items.size() == 2);
    CHECK(batch.samples() == 8);  // 2 x (1 + 3)
    for (const BatchItem& item : batch.items) {
        CHECK(item.neighbor_ids.size() == 3);
        CHECK(item.cached_k.size() == 3);
        for (std::size_t r = 0; r < 3; ++r) {
            CHECK(item.neighbor_ids[r] ==
                  index.entries[static_cast<std::size_t>(item.id)][r].first);
            CHECK(item.cached_k[r] ==
                  index.entries[static_cast<std::size_t>(item.id)][r].second);
            CHECK(item.neighbor_ids[r] != item.id);
        }
    }
}

TEST_CASE("N = 0 batches reduce to plain examples") {
    SparseDataset ds = tiny_dataset(5);
    RefreshPolicy policy{100, 0, true};
    Batch batch = assemble_batch(ds, empty_index(5), {1, 2, 3}, 7, policy);
    CHECK(batch.samples() == 3);
    for (const BatchItem& item : batch.items) CHECK(item.neighbor_ids.empty());
}

TEST_CASE("stale index raises under an adaptive policy") {
    SparseDataset ds = tiny_dataset(6);
    auto e = random_embeddings(6, 3, 9);
    RefreshPolicy policy{100, 2, true};
    NeighborIndex index = build_index(e, 2, 0);
    CHECK_THROWS_AS(assemble_batch(ds, index, {0}, 150, policy), std::logic_error);
    NeighborIndex fresh = build_index(e, 2, 100);
    CHECK_NOTHROW(assemble_batch(ds, fresh, {0}, 150, policy));
}

TEST_CASE("index CSV dump") {
    std::vector<std::vector<double>> e{{1.0, 0.0}, {0.8, 0.6}, {0.0, 1.0}};
    NeighborIndex index = build_index(e, 1);
    std::ostringstream out;
    dump_index_csv(index, out);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "example_id,rank,neighbor_id,k");
    std::getline(in, line);
    CHECK(line.substr(0, 6) == "0,0,1,");
}
