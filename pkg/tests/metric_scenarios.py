"""Hand-scored metric scenarios: (name, [(refs, preds) per clip], n_classes, (ER, F, LE, LR)).

All tracks below sit in a single clip unless noted; 10 label frames form
one segment.  Expected values are worked out by hand from the TP/FP/FN and
S/D/I rules.
"""
from dkseld.audio_io import EventAnnotation


def E(frame, cls, sid, az, el=0.0):
    return EventAnnotation(frame, cls, sid, float(az), float(el))


SCENARIOS = [
    ("perfect_single", [([E(0, 0, 0, 0)], [E(0, 0, 0, 0)])], 2, (0.0, 1.0, 0.0, 1.0)),
    ("perfect_full_segment",
     [([E(f, 0, 0, 45, 10) for f in range(10)], [E(f, 0, 0, 45, 10) for f in range(10)])], 2,
     (0.0, 1.0, 0.0, 1.0)),
    # far pair: one FP and one FN -> one substitution
    ("azimuth_30_off", [([E(0, 0, 0, 0)], [E(0, 0, 0, 30)])], 2, (1.0, 0.0, 30.0, 1.0)),
    ("azimuth_15_off", [([E(0, 0, 0, 0)], [E(0, 0, 0, 15)])], 2, (0.0, 1.0, 15.0, 1.0)),
    ("elevation_45_off", [([E(0, 0, 0, 0, 0)], [E(0, 0, 0, 0, 45)])], 2, (1.0, 0.0, 45.0, 1.0)),
    ("azimuth_wraps", [([E(0, 0, 0, 175)], [E(0, 0, 0, -170)])], 2, (0.0, 1.0, 15.0, 1.0)),
    # nothing paired anywhere: LE falls back to 180
    ("missing", [([E(0, 0, 0, 0)], [])], 2, (1.0, 0.0, 180.0, 0.0)),
    ("spurious_only", [([], [E(0, 1, 0, 0)])], 2, (1.0, 0.0, 180.0, 0.0)),
    ("spurious_other_class", [([E(0, 0, 0, 0)], [E(0, 0, 0, 0), E(0, 1, 0, 90)])], 2,
     (1.0, 0.5, 0.0, 1.0)),
    ("polyphonic_swapped_ids", [([E(0, 0, 0, 0), E(0, 0, 1, 90)], [E(0, 0, 0, 90), E(0, 0, 1, 0)])], 2,
     (0.0, 1.0, 0.0, 1.0)),
    ("polyphonic_crossing", [([E(0, 0, 0, 0), E(0, 0, 1, 90)], [E(0, 0, 0, 100), E(0, 0, 1, 10)])], 2,
     (0.0, 1.0, 10.0, 1.0)),
    ("polyphonic_one_missing", [([E(0, 0, 0, 0), E(0, 0, 1, 90)], [E(0, 0, 0, 5)])], 2,
     (0.5, 2 / 3, 5.0, 0.5)),
    ("polyphonic_three", [([E(0, 0, 0, 0), E(0, 0, 1, 120), E(0, 0, 2, -120)],
                           [E(0, 0, 0, -120), E(0, 0, 1, 0), E(0, 0, 2, 120)])], 2,
     (0.0, 1.0, 0.0, 1.0)),
    ("polyphonic_far_and_missing", [([E(0, 0, 0, 0), E(0, 0, 1, 90)], [E(0, 0, 0, -180)])], 2,
     (1.0, 0.0, 90.0, 0.5)),
    ("extra_duplicate_prediction", [([E(0, 0, 0, 0)], [E(0, 0, 0, 0), E(0, 0, 1, 5)])], 2,
     (1.0, 2 / 3, 0.0, 1.0)),
    ("two_classes_one_far", [([E(0, 0, 0, 0), E(0, 1, 0, 90)], [E(0, 0, 0, 10), E(0, 1, 0, 120)])], 2,
     (0.5, 0.5, 20.0, 1.0)),
    # class 0: FP+FN from the far pair; class 1: one more FP -> S=1, I=1 over 1 reference
    ("substitution_plus_insertion", [([E(0, 0, 0, 0)], [E(0, 0, 0, 60), E(0, 1, 0, 0)])], 2,
     (2.0, 0.0, 60.0, 1.0)),
    ("second_segment_missing", [([E(0, 0, 0, 0), E(10, 0, 0, 0)], [E(0, 0, 0, 0)])], 2,
     (0.5, 2 / 3, 0.0, 0.5)),
    ("segment_mean_direction", [([E(0, 0, 0, 0), E(1, 0, 0, 0)], [E(0, 0, 0, -10), E(1, 0, 0, 10)])], 2,
     (0.0, 1.0, 0.0, 1.0)),
    ("class_macro_le", [([E(0, 0, 0, 0), E(10, 0, 0, 0), E(0, 1, 0, 90)],
                         [E(0, 0, 0, 10), E(10, 0, 0, 16), E(0, 1, 0, 90)])], 2,
     (0.0, 1.0, 6.5, 1.0)),
    ("two_clips", [([E(0, 0, 0, 0)], [E(0, 0, 0, 0)]), ([E(0, 0, 0, 90)], [])], 2,
     (0.5, 2 / 3, 0.0, 0.5)),
    # segments of different clips never mix: the far-apart prediction in clip 2 cannot rescue clip 1
    ("clips_do_not_mix", [([E(0, 0, 0, 0)], []), ([], [E(0, 0, 0, 0)])], 2, (2.0, 0.0, 180.0, 0.0)),
    ("thirteen_classes_one_active", [([E(3, 7, 0, -30, 20)], [E(3, 7, 0, -30, 20)])], 13,
     (0.0, 1.0, 0.0, 1.0)),
]
