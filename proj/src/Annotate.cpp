#include "depsynth/Annotate.h"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "depsynth/Errors.h"

namespace depsynth {

namespace {

constexpr const char* kTokenVariable = "DEPSYNTH_API_TOKEN";

void archiveResponse(const std::string& path, const std::string& body) {
    if (path.empty()) return;
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCategory::Io, "cannot write annotation archive: " + path);
    out << body;
    if (!out) raise(ErrorCategory::Io, "failed while writing annotation archive: " + path);
}

std::string extractAssistantText(const std::string& body) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCategory::Network, std::string("annotation response is not valid json: ") + e.what());
    }
    try {
        return doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
        raise(ErrorCategory::Network, "annotation response lacks choices[0].message.content");
    }
}

}  // namespace

std::vector<std::string> annotationFeatureOrder(const Schema& schema) {
    std::vector<std::string> names;
    names.reserve(static_cast<std::size_t>(schema.size()));
    for (const FeatureSpec& f : schema.features()) {
        if (f.kind == FeatureKind::Numerical) names.push_back(f.name);
    }
    for (const FeatureSpec& f : schema.features()) {
        if (f.kind == FeatureKind::Categorical) names.push_back(f.name);
    }
    return names;
}

std::string buildPrompt(const AnnotationRequest& request) {
    if (request.featureNames.empty()) {
        raise(ErrorCategory::Config, "annotation request needs at least one feature name");
    }
    std::ostringstream features;
    for (std::size_t i = 0; i < request.featureNames.size(); ++i) {
        if (i > 0) features << ", ";
        features << request.featureNames[i];
    }
    std::ostringstream prompt;
    prompt << "Given a tabular dataset with the following description:\n"
           << "\"" << request.datasetDescription << "\"\n"
           << "\n"
           << "The dataset holds the following features, represented in numbers or text strings:\n"
           << features.str() << "\n"
           << "\n"
           << "Please list the constraints for each feature based on the others. Return the results "
              "in the following format: for each feature, first output the feature name followed by "
              "a colon, and then a set of constraints represented by square brackets. The `->` "
              "symbol indicates that the former is the cause and the latter is the effect. "
              "Different constraints should be separated by commas.\n"
           << "\n"
           << "Here is an example:\n"
           << "Feature A: [Feature B->Feature A, Feature C->Feature A]\n"
           << "This means that both Feature B and Feature C determine the range of Feature A.\n"
           << "\n"
           << "Please leave it blank if there is no relation between a feature and others.\n";
    return prompt.str();
}

std::string requestAnnotation(const AnnotationRequest& request) {
    if (request.endpoint.empty()) raise(ErrorCategory::Config, "annotation endpoint is empty");
    if (request.timeoutSeconds <= 0) raise(ErrorCategory::Config, "annotation timeout must be > 0");
    if (request.maxRetries < 0) raise(ErrorCategory::Config, "annotation retry count must be >= 0");
    const std::string prompt = buildPrompt(request);

    nlohmann::json payload;
    payload["model"] = request.modelName;
    payload["messages"] = nlohmann::json::array({
        nlohmann::json{{"role", "user"}, {"content", prompt}},
    });
    const std::string body = payload.dump();

    httplib::Client client(request.endpoint);
    client.set_connection_timeout(request.timeoutSeconds);
    client.set_read_timeout(request.timeoutSeconds);
    client.set_write_timeout(request.timeoutSeconds);
    httplib::Headers headers;
    if (!request.authToken.empty()) {
        headers.emplace("Authorization", "Bearer " + request.authToken);
    }

    std::string lastFailure = "no attempt made";
    for (int attempt = 0; attempt <= request.maxRetries; ++attempt) {
        if (attempt > 0) {
            const double delay = request.backoffSeconds * std::pow(2.0, attempt - 1);
            std::this_thread::sleep_for(std::chrono::duration<double>(delay));
        }
        httplib::Result res = client.Post(request.path, headers, body, "application/json");
        if (!res) {
            lastFailure = "connection failure: " + httplib::to_string(res.error());
            continue;  // transient
        }
        if (res->status >= 500) {
            lastFailure = "server status " + std::to_string(res->status);
            continue;  // transient
        }
        archiveResponse(request.archivePath, res->body);
        if (res->status < 200 || res->status >= 300) {
            raise(ErrorCategory::Network,
                  "annotation request rejected with status " + std::to_string(res->status));
        }
        const std::string text = extractAssistantText(res->body);
        if (text.empty()) raise(ErrorCategory::Network, "annotation response body is empty");
        return text;
    }
    raise(ErrorCategory::Network, "annotation retries exhausted; last failure: " + lastFailure);
}

std::string authTokenFromEnvironment() {
    const char* token = std::getenv(kTokenVariable);
    return token == nullptr ? "" : token;
}

}  // namespace depsynth
