#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace knnicl {

struct Example {
    std::string id;
    std::string text;
    std::string label;

    bool operator==(const Example&) const = default;
};

/// Ordered, duplicate-free set of class labels. The order indexes every
/// contingency matrix built for the dataset.
class LabelSpace {
public:
    LabelSpace() = default;
    explicit LabelSpace(std::vector<std::string> labels);

    /// Sorted lexicographically from the observed labels.
    static LabelSpace from_observed(const std::vector<std::string>& observed);

    const std::vector<std::string>& labels() const noexcept { return labels_; }
    std::size_t size() const noexcept { return labels_.size(); }
    const std::string& operator[](std::size_t i) const { return labels_[i]; }

    std::optional<std::size_t> index_of(std::string_view label) const;
    bool contains(std::string_view label) const { return index_of(label).has_value(); }

    bool operator==(const LabelSpace&) const = default;

private:
    std::vector<std::string> labels_;
};

struct Dataset {
    std::string name;
    std::vector<Example> train;
    std::vector<Example> test;
    LabelSpace label_space;

    const Example* find_test(std::string_view id) const;
    const Example* find_train(std::string_view id) const;
};

struct SplitSample {
    std::string dataset_name;
    std::int64_t seed = 0;
    std::vector<std::string> example_ids;
};

enum class RecordFormat { Csv, Jsonl };

RecordFormat parse_record_format(std::string_view name);
std::string_view to_string(RecordFormat format);

/// Where a dataset lives on disk. Train and test are separate files with the
/// same record schema (`id` optional, `text`, `label`).
struct DatasetSource {
    std::string name;
    std::filesystem::path train_path;
    std::filesystem::path test_path;
    RecordFormat format = RecordFormat::Jsonl;
    /// Fixes the label order; otherwise it is inferred and sorted.
    std::optional<std::vector<std::string>> label_manifest;
};

/// Reads one split. Records without an `id` get `<split>-<row-index>`.
/// Throws RecordError naming the file line of a malformed record.
std::vector<Example> load_examples(const std::filesystem::path& path, RecordFormat format,
                                   std::string_view split);

Dataset load_dataset(const DatasetSource& source);

/// Builds a dataset from in-memory splits and checks every invariant
/// (unique ids, disjoint splits, labels inside the label space).
Dataset make_dataset(std::string name, std::vector<Example> train, std::vector<Example> test,
                     std::optional<LabelSpace> label_space = std::nullopt);

void write_examples(const std::filesystem::path& path, RecordFormat format,
                    const std::vector<Example>& examples);

/// min(n, |test|) test ids drawn without replacement, reported in stored
/// order. A pure function of (dataset name, test ids, n, seed).
SplitSample sample_test(const Dataset& dataset, std::size_t n, std::int64_t seed);

} // namespace knnicl
