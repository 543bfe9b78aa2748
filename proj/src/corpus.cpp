#include "knnicl/corpus.hpp"

#include "knnicl/errors.hpp"
#include "knnicl/hashing.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

namespace knnicl {

namespace {

using nlohmann::json;

struct RawRecord {
    std::size_t line = 0;
    std::optional<std::string> id;
    std::optional<std::string> text;
    std::optional<std::string> label;
};

// RFC 4180 reader. Quoted fields may span lines; each row remembers the
// physical line it started on.
class CsvReader {
public:
    explicit CsvReader(std::istream& in) : in_(in) {}

    bool next(std::vector<std::string>& fields, std::size_t& start_line) {
        fields.clear();
        int c = in_.get();
        if (c == EOF) return false;
        start_line = ++line_;
        std::string field;
        bool quoted = false;
        bool field_started = false;
        while (true) {
            if (c == EOF) {
                if (quoted) throw std::runtime_error("unterminated quoted field");
                fields.push_back(std::move(field));
                return true;
            }
            char ch = static_cast<char>(c);
            if (quoted) {
                if (ch == '"') {
                    if (in_.peek() == '"') {
                        in_.get();
                        field.push_back('"');
                    } else {
                        quoted = false;
                    }
                } else {
                    if (ch == '\n') ++line_;
                    field.push_back(ch);
                }
            } else if (ch == '"' && !field_started) {
                quoted = true;
                field_started = true;
            } else if (ch == ',') {
                fields.push_back(std::move(field));
                field.clear();
                field_started = false;
            } else if (ch == '\n' || ch == '\r') {
                if (ch == '\r' && in_.peek() == '\n') in_.get();
                fields.push_back(std::move(field));
                return true;
            } else {
                field.push_back(ch);
                field_started = true;
            }
            c = in_.get();
        }
    }

private:
    std::istream& in_;
    std::size_t line_ = 0;
};

std::vector<RawRecord> read_csv(const std::filesystem::path& path, std::istream& in) {
    CsvReader reader(in);
    std::vector<std::string> fields;
    std::size_t line = 0;
    std::vector<RawRecord> out;
    std::map<std::string, std::size_t> columns;
    try {
        if (!reader.next(fields, line)) return out;
        for (std::size_t i = 0; i < fields.size(); ++i) columns[fields[i]] = i;
        if (!columns.contains("text") || !columns.contains("label")) {
            throw RecordError(path.string(), line, "header must name 'text' and 'label' columns");
        }
        auto get = [&](const char* name) -> std::optional<std::string> {
            auto it = columns.find(name);
            if (it == columns.end() || it->second >= fields.size()) return std::nullopt;
            return fields[it->second];
        };
        while (reader.next(fields, line)) {
            if (fields.size() == 1 && fields[0].empty()) continue;
            RawRecord r;
            r.line = line;
            r.id = get("id");
            if (r.id && r.id->empty()) r.id.reset();
            r.text = get("text");
            r.label = get("label");
            out.push_back(std::move(r));
        }
    } catch (const RecordError&) {
        throw;
    } catch (const std::exception& e) {
        throw RecordError(path.string(), line, e.what());
    }
    return out;
}

std::vector<RawRecord> read_jsonl(const std::filesystem::path& path, std::istream& in) {
    std::vector<RawRecord> out;
    std::string buf;
    std::size_t line = 0;
    while (std::getline(in, buf)) {
        ++line;
        if (!buf.empty() && buf.back() == '\r') buf.pop_back();
        if (buf.find_first_not_of(" \t") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(buf);
        } catch (const json::parse_error& e) {
            throw RecordError(path.string(), line, std::string("invalid JSON: ") + e.what());
        }
        if (!j.is_object()) throw RecordError(path.string(), line, "record is not an object");
        RawRecord r;
        r.line = line;
        auto str = [&](const char* key) -> std::optional<std::string> {
            auto it = j.find(key);
            if (it == j.end() || it->is_null()) return std::nullopt;
            if (!it->is_string()) {
                throw RecordError(path.string(), line, std::string("field '") + key + "' is not a string");
            }
            return it->get<std::string>();
        };
        r.id = str("id");
        r.text = str("text");
        r.label = str("label");
        out.push_back(std::move(r));
    }
    return out;
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

// Uniform draw in [0, bound) by rejection; the result sequence depends only on
// the engine output, unlike std::uniform_int_distribution.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % bound;
}

} // namespace

LabelSpace::LabelSpace(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.size() < 2) {
        throw ContractError("a label space needs at least 2 labels, got " +
                            std::to_string(labels_.size()));
    }
    std::set<std::string> seen;
    for (const auto& l : labels_) {
        if (l.empty()) throw ContractError("empty label in label space");
        if (!seen.insert(l).second) throw ContractError("duplicate label '" + l + "'");
    }
}

LabelSpace LabelSpace::from_observed(const std::vector<std::string>& observed) {
    std::set<std::string> s(observed.begin(), observed.end());
    return LabelSpace(std::vector<std::string>(s.begin(), s.end()));
}

std::optional<std::size_t> LabelSpace::index_of(std::string_view label) const {
    auto it = std::find(labels_.begin(), labels_.end(), label);
    if (it == labels_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - labels_.begin());
}

const Example* Dataset::find_test(std::string_view id) const {
    for (const auto& e : test)
        if (e.id == id) return &e;
    return nullptr;
}

const Example* Dataset::find_train(std::string_view id) const {
    for (const auto& e : train)
        if (e.id == id) return &e;
    return nullptr;
}

RecordFormat parse_record_format(std::string_view name) {
    if (name == "csv") return RecordFormat::Csv;
    if (name == "jsonl") return RecordFormat::Jsonl;
    throw ConfigError("unknown record format '" + std::string(name) + "' (expected csv or jsonl)");
}

std::string_view to_string(RecordFormat format) {
    return format == RecordFormat::Csv ? "csv" : "jsonl";
}

std::vector<Example> load_examples(const std::filesystem::path& path, RecordFormat format,
                                   std::string_view split) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    auto raw = format == RecordFormat::Csv ? read_csv(path, in) : read_jsonl(path, in);

    std::vector<Example> out;
    out.reserve(raw.size());
    std::unordered_set<std::string> ids;
    for (std::size_t row = 0; row < raw.size(); ++row) {
        auto& r = raw[row];
        if (!r.text || r.text->empty()) throw RecordError(path.string(), r.line, "missing or empty text");
        if (!r.label || r.label->empty()) throw RecordError(path.string(), r.line, "missing or empty label");
        Example e;
        e.id = r.id ? *r.id : std::string(split) + "-" + std::to_string(row);
        e.text = std::move(*r.text);
        e.label = std::move(*r.label);
        if (!ids.insert(e.id).second) throw RecordError(path.string(), r.line, "duplicate id '" + e.id + "'");
        out.push_back(std::move(e));
    }
    return out;
}

Dataset make_dataset(std::string name, std::vector<Example> train, std::vector<Example> test,
                     std::optional<LabelSpace> label_space) {
    if (!label_space) {
        std::vector<std::string> observed;
        for (const auto& e : train) observed.push_back(e.label);
        for (const auto& e : test) observed.push_back(e.label);
        label_space = LabelSpace::from_observed(observed);
    }
    std::unordered_set<std::string> ids;
    auto check = [&](const std::vector<Example>& split, const char* which) {
        for (const auto& e : split) {
            if (e.text.empty()) throw ContractError(std::string(which) + " example '" + e.id + "' has empty text");
            if (!label_space->contains(e.label)) {
                throw ContractError(std::string(which) + " example '" + e.id + "' has label '" + e.label +
                                    "' outside the label space");
            }
            if (!ids.insert(e.id).second) throw ContractError("duplicate example id '" + e.id + "'");
        }
    };
    check(train, "train");
    check(test, "test");
    return Dataset{std::move(name), std::move(train), std::move(test), std::move(*label_space)};
}

Dataset load_dataset(const DatasetSource& source) {
    auto train = load_examples(source.train_path, source.format, "train");
    auto test = load_examples(source.test_path, source.format, "test");
    std::optional<LabelSpace> ls;
    if (source.label_manifest) ls = LabelSpace(*source.label_manifest);
    return make_dataset(source.name, std::move(train), std::move(test), std::move(ls));
}

void write_examples(const std::filesystem::path& path, RecordFormat format,
                    const std::vector<Example>& examples) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    if (format == RecordFormat::Csv) {
        out << "id,text,label\n";
        for (const auto& e : examples) {
            out << csv_escape(e.id) << ',' << csv_escape(e.text) << ',' << csv_escape(e.label) << '\n';
        }
    } else {
        for (const auto& e : examples) {
            json j = {{"id", e.id}, {"text", e.text}, {"label", e.label}};
            out << j.dump() << '\n';
        }
    }
}

SplitSample sample_test(const Dataset& dataset, std::size_t n, std::int64_t seed) {
    if (n == 0) throw ContractError("sample size must be positive");
    SplitSample s{dataset.name, seed, {}};
    const std::size_t total = dataset.test.size();
    if (n >= total) {
        for (const auto& e : dataset.test) s.example_ids.push_back(e.id);
        return s;
    }
    std::mt19937_64 rng(mix64(fnv1a64(dataset.name) ^ static_cast<std::uint64_t>(seed)));
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Partial Fisher-Yates over the first n slots.
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = i + bounded(rng, total - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    for (auto i : idx) s.example_ids.push_back(dataset.test[i].id);
    return s;
}

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

} // namespace knnicl
