#pragma once

#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

#include "nt/synthgen.hpp"
#include "nt/tensor.hpp"

namespace nt {

// K_ij = max{0, cos(e_i, e_j)}. Zero-norm inputs signal projection collapse.
double similarity(const std::vector<double>& a, const std::vector<double>& b);

// Differentiable variant used at loss time so gradients reach r(.).
Tensor similarity(const Tensor& a, const Tensor& b);

struct NeighborIndex {
    // Per example: (neighbor id, K) pairs sorted by descending K, ties toward
    // the lower id. Self never appears in its own list.
    std::vector<std::vector<std::pair<int, double>>> entries;
    std::int64_t version = 0;
    int neighborhood_size = 0;

    int size() const { return static_cast<int>(entries.size()); }
};

struct RefreshPolicy {
    int period = 100;
    int neighborhood_size = 5;
    bool adaptive = true;

    void validate() const;
    // Latest period boundary at or before `step`; an index older than this is
    // stale under an adaptive policy.
    std::int64_t expected_version(std::int64_t step) const;
};

// Exact brute-force k-NN under the similarity kernel over all M embeddings.
NeighborIndex build_index(const std::vector<std::vector<double>>& embeddings, int n,
                          std::int64_t version = 0, int threads = 1);

// Index with no neighbors (N = 0): batches degenerate to plain MLE.
NeighborIndex empty_index(int m, std::int64_t version = 0);

// Rebuild on period boundaries of an adaptive policy; otherwise a no-op.
NeighborIndex refresh(const NeighborIndex& index,
                      const std::vector<std::vector<double>>& embeddings,
                      std::int64_t step, const RefreshPolicy& policy, int threads = 1);

struct BatchItem {
    int id = -1;
    std::vector<int> neighbor_ids;       // loss-side N(x_i), self excluded
    std::vector<double> cached_k;        // index K values (selection only)
};

struct Batch {
    std::vector<BatchItem> items;
    // One forward pass per own example plus one per neighbor pairing.
    std::int64_t samples() const;
};

// Materialize the B x (N+1) pairings for one step. The K values carried here
// are the cached selection values; losses recompute K differentiably from the
// current projections. Throws if the index predates the last period boundary.
Batch assemble_batch(const SparseDataset& dataset, const NeighborIndex& index,
                     const std::vector<int>& example_ids, std::int64_t step,
                     const RefreshPolicy& policy);

// CSV rows: example-id, rank, neighbor-id, K.
void dump_index_csv(const NeighborIndex& index, std::ostream& out);

}  // namespace nt
