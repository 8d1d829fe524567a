#pragma once

// Performance-guided knowledge distillation: a compact student text
// classifier is trained, evaluated, and iteratively improved by a teacher
// model that generates new training data conditioned on the student's
// validation report, its correct/incorrect samples, and hard negatives.

#include "pgkd/corpus.hpp"
#include "pgkd/cost.hpp"
#include "pgkd/featurizer.hpp"
#include "pgkd/http_teacher.hpp"
#include "pgkd/json_extract.hpp"
#include "pgkd/loop.hpp"
#include "pgkd/metrics.hpp"
#include "pgkd/mock_teacher.hpp"
#include "pgkd/runner.hpp"
#include "pgkd/student.hpp"
#include "pgkd/teacher.hpp"
