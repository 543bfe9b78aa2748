#pragma once

#include "knnicl/config.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace knnicl {

struct ServiceOptions {
    std::string host = "127.0.0.1";
    /// 0 picks a free port.
    int port = 0;
    /// Static annotation UI; empty disables it.
    std::filesystem::path ui_dir;
};

/// HTTP front end of a run directory:
///   GET  /tasks?annotator=ID   pending annotation tasks, lowest id first
///   POST /judgments            {task_id, relevant, annotator?}
///   GET  /status               progress and per-query relevance scores
///   POST /classify             {text, k?, threshold?, dataset?}
///   GET  /                     annotation UI
class Service {
public:
    /// The run directory (config.output_dir) must already hold a manifest.
    explicit Service(ExperimentConfig config);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds and serves on a background thread. Throws on bind failure.
    int start(const ServiceOptions& options = {});
    void stop();
    /// Blocks until stop() is called from another thread or a signal.
    void wait();
    int port() const noexcept { return port_; }

    // Handlers, callable without HTTP. Each returns (status, body).
    std::pair<int, nlohmann::json> handle_tasks(const std::string& annotator, std::size_t limit = 50);
    std::pair<int, nlohmann::json> handle_judgment(const nlohmann::json& body);
    std::pair<int, nlohmann::json> handle_status();
    std::pair<int, nlohmann::json> handle_classify(const nlohmann::json& body);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int port_ = 0;
};

} // namespace knnicl
