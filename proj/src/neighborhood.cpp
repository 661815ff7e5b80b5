#include "nt/neighborhood.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "nt/util.hpp"

namespace nt {

double similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("similarity: width mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0)
        throw std::domain_error("similarity: zero-norm embedding (projection collapse)");
    return std::max(0.0, dot / std::sqrt(na * nb));
}

Tensor similarity(const Tensor& a, const Tensor& b) {
    return clamp_min(cosine(a, b), 0.0);
}

void RefreshPolicy::validate() const {
    if (period < 1) throw std::invalid_argument("RefreshPolicy: period must be >= 1");
    if (neighborhood_size < 0)
        throw std::invalid_argument("RefreshPolicy: negative neighborhood size");
}

std::int64_t RefreshPolicy::expected_version(std::int64_t step) const {
    if (!adaptive) return 0;
    return step - step % period;
}

NeighborIndex build_index(const std::vector<std::vector<double>>& embeddings, int n,
                          std::int64_t version, int threads) {
    int m = static_cast<int>(embeddings.size());
    if (n < 1 || n > m - 1)
        throw std::invalid_argument("build_index: N must be in [1, M-1], got N=" +
                                    std::to_string(n) + " M=" + std::to_string(m));
    NeighborIndex index;
    index.entries.resize(static_cast<std::size_t>(m));
    index.version = version;
    index.neighborhood_size = n;

    parallel_for(static_cast<std::size_t>(m), threads, [&](std::size_t row) {
        int i = static_cast<int>(row);
        std::vector<std::pair<int, double>> all;
        all.reserve(static_cast<std::size_t>(m) - 1);
        for (int j = 0; j < m; ++j) {
            if (j == i) continue;
            all.emplace_back(j, similarity(embeddings[row],
                                           embeddings[static_cast<std::size_t>(j)]));
        }
        auto by_k_desc = [](const std::pair<int, double>& a,
                            const std::pair<int, double>& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        };
        std::partial_sort(all.begin(), all.begin() + n, all.end(), by_k_desc);
        all.resize(static_cast<std::size_t>(n));
        index.entries[row] = std::move(all);
    });
    return index;
}

NeighborIndex empty_index(int m, std::int64_t version) {
    NeighborIndex index;
    index.entries.resize(static_cast<std::size_t>(m));
    index.version = version;
    index.neighborhood_size = 0;
    return index;
}

NeighborIndex refresh(const NeighborIndex& index,
                      const std::vector<std::vector<double>>& embeddings,
                      std::int64_t step, const RefreshPolicy& policy, int threads) {
    policy.validate();
    if (!policy.adaptive || step % policy.period != 0) return index;
    if (policy.neighborhood_size == 0)
        return empty_index(static_cast<int>(embeddings.size()), step);
    return build_index(embeddings, policy.neighborhood_size, step, threads);
}

std::int64_t Batch::samples() const {
    std::int64_t n = 0;
    for (const BatchItem& item : items)
        n += 1 + static_cast<std::int64_t>(item.neighbor_ids.size());
    return n;
}

Batch assemble_batch(const SparseDataset& dataset, const NeighborIndex& index,
                     const std::vector<int>& example_ids, std::int64_t step,
                     const RefreshPolicy& policy) {
    if (index.size() != dataset.size())
        throw std::invalid_argument("assemble_batch: index covers " +
                                    std::to_string(index.size()) + " examples, dataset has " +
                                    std::to_string(dataset.size()));
    if (policy.neighborhood_size > 0 && index.version < policy.expected_version(step))
        throw std::logic_error("assemble_batch: stale index (version " +
                               std::to_string(index.version) + ", step " +
                               std::to_string(step) + ", period " +
                               std::to_string(policy.period) + ")");
    Batch batch;
    for (int id : example_ids) {
        if (id < 0 || id >= dataset.size())
            throw std::out_of_range("assemble_batch: example id " + std::to_string(id));
        BatchItem item;
        item.id = id;
        for (const auto& [nid, k] : index.entries[static_cast<std::size_t>(id)]) {
            item.neighbor_ids.push_back(nid);
            item.cached_k.push_back(k);
        }
        batch.items.push_back(std::move(item));
    }
    return batch;
}

void dump_index_csv(const NeighborIndex& index, std::ostream& out) {
    out << "example_id,rank,neighbor_id,k\n";
    for (int i = 0; i < index.size(); ++i) {
        const auto& row = index.entries[static_cast<std::size_t>(i)];
        for (std::size_t r = 0; r < row.size(); ++r)
            out << i << ',' << r << ',' << row[r].first << ',' << row[r].second << '\n';
    }
}

}  // namespace nt
