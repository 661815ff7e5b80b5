#pragma once

#include <cstdint>
#include <string>

#include "nt/models.hpp"
#include "nt/synthgen.hpp"

namespace nt {

// Single-file layout: one-line JSON header (dims, byte counts, split tags),
// then raw little-endian float64 payloads (features, regions, posterior),
// then the annotations as CSV text: id,train|full,space-separated tokens.
void write_dataset(const SparseDataset& dataset, const std::string& path);
SparseDataset read_dataset(const std::string& path);

// Binds a report to its data: hash over features, annotations, and split.
std::string dataset_fingerprint(const SparseDataset& dataset);

// Checkpoint: one-line JSON header (specs, seed, step, parameter directory)
// followed by each parameter's values as little-endian float64, task group
// first, both groups in declaration order.
void write_checkpoint(const ModelBundle& bundle, std::int64_t step,
                      const std::string& path);

struct Checkpoint {
    ModelBundle bundle;
    std::int64_t step = 0;
    std::uint64_t seed = 0;
};

Checkpoint read_checkpoint(const std::string& path);

}  // namespace nt
