#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pgkd {

// Base type for every error raised by the pipeline. Callers that do not care
// about the precise failure can catch this one.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UnknownLabel : Error {
    UnknownLabel(std::size_t record_index, std::string label_name)
        : Error("unknown label '" + label_name + "' at record " +
                std::to_string(record_index)),
          record_index(record_index),
          name(std::move(label_name)) {}
    std::size_t record_index;
    std::string name;
};

struct EmptyText : Error {
    explicit EmptyText(std::size_t record_index)
        : Error("empty text at record " + std::to_string(record_index)),
          record_index(record_index) {}
    std::size_t record_index;
};

struct MalformedRecord : Error {
    MalformedRecord(std::size_t record_index, const std::string& detail)
        : Error("malformed record " + std::to_string(record_index) + ": " + detail),
          record_index(record_index) {}
    std::size_t record_index;
};

struct InsufficientPool : Error {
    InsufficientPool(std::size_t requested, std::size_t available)
        : Error("requested " + std::to_string(requested) + " samples from a pool of " +
                std::to_string(available)),
          requested(requested),
          available(available) {}
    std::size_t requested;
    std::size_t available;
};

struct DegenerateSplit : Error {
    DegenerateSplit() : Error("split would leave the train or validation side empty") {}
};

// A text string ended up on both sides of a split; the validation set must
// stay disjoint from training data by exact text.
struct SplitTextOverlap : Error {
    explicit SplitTextOverlap(const std::string& text)
        : Error("duplicate text crosses the train/validation boundary: " + text) {}
};

struct EmptyDataset : Error {
    EmptyDataset() : Error("operation requires a non-empty dataset") {}
};

struct DanglingId : Error {
    explicit DanglingId(long id)
        : Error("prediction record refers to unknown sample id " + std::to_string(id)),
          id(id) {}
    long id;
};

struct EmptyFewShot : Error {
    EmptyFewShot() : Error("prompt context requires at least one few-shot sample") {}
};

struct UnparsableResponse : Error {
    explicit UnparsableResponse(const std::string& detail)
        : Error("no list-of-objects payload found in response: " + detail) {}
};

struct PoolExhausted : Error {
    explicit PoolExhausted(const std::string& class_name)
        : Error("mock teacher reserve exhausted for class '" + class_name + "'"),
          class_name(class_name) {}
    std::string class_name;
};

struct UsageError : Error {
    using Error::Error;
};

}  // namespace pgkd
