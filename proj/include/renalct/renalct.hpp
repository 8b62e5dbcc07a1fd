#pragma once

#include "renalct/backend.hpp"
#include "renalct/dicom_io.hpp"
#include "renalct/error.hpp"
#include "renalct/extract.hpp"
#include "renalct/grid.hpp"
#include "renalct/ingest.hpp"
#include "renalct/metric_table.hpp"
#include "renalct/metrics.hpp"
#include "renalct/parallel.hpp"
#include "renalct/phantom.hpp"
#include "renalct/pipeline.hpp"
#include "renalct/png_io.hpp"
#include "renalct/porter_stemmer.hpp"
#include "renalct/predictor_bridge.hpp"
#include "renalct/preprocess.hpp"
#include "renalct/prompt.hpp"
#include "renalct/rng.hpp"
#include "renalct/rule_parser.hpp"
#include "renalct/schema.hpp"
#include "renalct/split.hpp"
#include "renalct/stub_report.hpp"
