#include "gdprtm/annotations.hpp"

#include <algorithm>
#include <array>

namespace gdprtm {

namespace {

constexpr std::array<std::string_view, 10> kVocabulary = {
    kConsentProvided,
    kConsentRequestFormProvided,
    kRequestForErasingData,
    kRequestCleanData,
    kRequestEraseData,
    kCleanDataResponse,
    kNotifyRecipientAboutErasingData,
    kEraseDataWithin28Days,
    kComplainDataBreach,
    kReportDataBreach,
};

}  // namespace

std::span<const std::string_view> annotation_vocabulary() { return kVocabulary; }

bool is_known_annotation(std::string_view token) {
  return std::find(kVocabulary.begin(), kVocabulary.end(), token) != kVocabulary.end();
}

std::string_view expand_annotation_alias(std::string_view token) {
  if (token == "CP") return kConsentProvided;
  if (token == "CRFP") return kConsentRequestFormProvided;
  return token;
}

}  // namespace gdprtm
