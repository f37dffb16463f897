"""
exception hierarchy of the obfuscation toolkit

every error the library raises on purpose derives from `SboError`; the management command
turns those into a `CommandError` (exit status 1)
"""


class SboError(RuntimeError):
    """base class for all toolkit errors"""


##############################################################################################
## INPUT AND DATASET ERRORS

class ParseError(SboError):
    """malformed row in a delimited input file"""
    def __init__(s, message, line=None):
        if line != None: message = "line {}: {}".format(line, message)
        super().__init__(message)
        s.line = line

class EmptyInputError(SboError):
    """input file (or dataset) without any data rows"""

class CoverageError(SboError):
    """dataset users without an attribute label"""
    def __init__(s, missing):
        s.missing = list(missing)
        shown = ", ".join(str(m) for m in s.missing[:20])
        if len(s.missing) > 20: shown += ", ..."
        super().__init__("{} user(s) without attribute label: {}".format(len(s.missing), shown))

class LabelCardinalityError(SboError):
    """the attribute must take exactly two values"""

class EmptyCoreError(SboError):
    """k-core filtering removed every interaction"""

class SplitInfeasibleError(SboError):
    """a user profile is too small for a holdout split"""
    def __init__(s, user, size):
        s.user = user
        super().__init__("user '{}' has {} interaction(s), a split needs at least 2".format(user, size))

class FoldInfeasibleError(SboError):
    """more folds than users"""

class DimensionError(SboError):
    """index or vector outside the fixed item universe"""


##############################################################################################
## SCORING AND OBFUSCATION ERRORS

class EmptyGroupError(SboError):
    """inclination is undefined for an empty user group"""

class UndefinedScoreError(SboError):
    """stereotypicality of an empty profile / threshold of no users"""

class UnknownGroupError(SboError):
    """group tag that is not part of the table's group order"""

class ProfileEmptiedError(SboError):
    """obfuscation would leave a profile without interactions"""


##############################################################################################
## TRAINING AND EVALUATION ERRORS

class DivergenceError(SboError):
    """training produced a non-finite loss"""
    def __init__(s, epoch, loss):
        s.epoch = epoch
        super().__init__("non-finite loss {} in epoch {}".format(loss, epoch))

class DegenerateLabelsError(SboError):
    """only one class present where two are required"""

class UndefinedMetricError(SboError):
    """metric undefined for the given labels"""


##############################################################################################
## CONFIGURATION

class ConfigError(SboError, ValueError):
    """invalid configuration value"""
