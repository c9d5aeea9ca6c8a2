#pragma once

#include <map>
#include <string>

#include "compcal/model.hpp"

namespace compcal::model {

// Side state carried alongside the parameters: serialized rng streams and the
// fingerprint of the experiment config that produced the model.
struct CheckpointExtra {
    std::map<std::string, std::string> rng_states;
    std::string config_hash;
};

struct LoadedCheckpoint {
    LayeredClassifier model;
    CheckpointExtra extra;
};

// Binary container: 8-byte magic "CCALCKV1", little-endian u32 format version,
// little-endian u64 header length, a JSON header (architecture, probe layout,
// freeze mask, rng states, config hash, payload checksum), then the parameter
// payload as little-endian 64-bit floats in a fixed tensor order (blocks
// bottom-up, head, probes bottom-up; weights before bias). Writes go to a
// temporary file renamed into place, so a crash never leaves a partial file.
void save_checkpoint(const LayeredClassifier& m, const std::string& path,
                     const CheckpointExtra& extra = {});

// Reconstructs the model (architecture, probes, freeze mask, parameters) from
// a checkpoint file. Throws on truncation, corruption, or version mismatch.
LoadedCheckpoint load_checkpoint(const std::string& path);

// Loads parameters into an existing model; rejects the file if its
// architecture descriptor or probe layout differs from the model's.
CheckpointExtra load_checkpoint_into(LayeredClassifier& m, const std::string& path);

}  // namespace compcal::model
