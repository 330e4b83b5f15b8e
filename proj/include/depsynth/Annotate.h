#pragma once

#include <string>
#include <vector>

#include "depsynth/Table.h"

namespace depsynth {

// One annotation call against a chat-completion HTTP service. The auth token
// is a bearer secret sourced from the environment (DEPSYNTH_API_TOKEN) — it
// must never travel through a command-line flag.
struct AnnotationRequest {
    std::string datasetDescription;
    std::vector<std::string> featureNames;  // numerical features first, then categorical
    std::string endpoint;                   // scheme://host[:port]
    std::string path = "/v1/chat/completions";
    std::string modelName;
    std::string authToken;
    int timeoutSeconds = 60;
    int maxRetries = 3;           // additional attempts after the first
    double backoffSeconds = 1.0;  // delay before the first retry; doubles each retry
    std::string archivePath;      // raw response body is copied here when non-empty
};

// Prompt feature order: numerical features first, categorical after, keeping
// schema order within each group.
std::vector<std::string> annotationFeatureOrder(const Schema& schema);

// Renders the fixed annotation prompt template with the description and the
// comma-separated feature list substituted. Deterministic: identical requests
// produce byte-identical prompts.
std::string buildPrompt(const AnnotationRequest& request);

// POSTs {model, messages: [{role: "user", content: prompt}]} with bearer
// auth, retrying transient failures (connection errors, 5xx) with exponential
// backoff. Returns the assistant message text; the raw response body is
// archived to `archivePath` before any parsing so malformed replies are still
// captured for provenance.
std::string requestAnnotation(const AnnotationRequest& request);

// Reads DEPSYNTH_API_TOKEN; empty string when unset.
std::string authTokenFromEnvironment();

}  // namespace depsynth
