import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memtriad import (
    Annotation,
    Attitude,
    InvalidArgument,
    MemoryOp,
    OpKind,
    ParseError,
    ProviderError,
    RuleBasedAnalyzer,
    ScriptError,
    ScriptedAnalyzer,
    annotate,
    decide_attribute_op,
    decide_fact_op,
    merge_cluster,
    respond,
)
from memtriad.analyzer import (
    EMPTY_CONTEXT_MARKER,
    load_prompt,
    longest_member,
    normalize_phrase,
    parse_annotation,
)


class TestParseAnnotation:
    # shape mirrors the tagging prompt's JSON schema
    JAZZ_OUTPUT = """
    {
    "text": "Last week's jazz workshop helped me overcome performance anxiety since the tutors are so patients.",
    "tags": {
        "topic": ["music workshop"],
        "attitude": ["Positive"],
        "reason": ["The tutors can teach the use patiently."],
        "facts": ["join jazz workshop last week"],
        "attributes": ["user worrys about jazz performance"]
    },
    "summary": "Jazz workshop helped the user overcome performance anxiety.",
    "rationale": "The user's performance anxiety was alleviated."
    }
    """

    BASKETBALL_OUTPUT = """
    {
    "text": "The user step away from playing baskerball due to too much stress.",
    "tags": {
        "topic": ["playing basketball"],
        "attitude": ["negative"],
        "reason": ["Too much stree for playing basketball"],
        "facts": ["stop playing basketball"],
        "attributes": ["user hate stress"]
    },
    "summary": "The user stop playing baskerball due to too much stress.",
    "rationale": "Therefore, the user is negative towards playing basketball."
    }
    """

    def test_jazz_example(self):
        ann = parse_annotation(self.JAZZ_OUTPUT)
        assert ann.topic == "music workshop"
        assert ann.attitude is Attitude.POSITIVE
        assert ann.facts == ["join jazz workshop last week"]
        assert ann.attributes == ["user worrys about jazz performance"]

    def test_basketball_example(self):
        ann = parse_annotation(self.BASKETBALL_OUTPUT)
        assert ann.topic == "playing basketball"
        assert ann.attitude is Attitude.NEGATIVE
        assert ann.facts == ["stop playing basketball"]
        assert ann.attributes == ["user hate stress"]

    def test_json_wrapped_in_prose(self):
        ann = parse_annotation("Sure! Here you go:\n" + self.JAZZ_OUTPUT + "\nHope it helps.")
        assert ann.topic == "music workshop"

    def test_schema_attitude_typo_tolerated(self):
        raw = self.JAZZ_OUTPUT.replace("Positive", "Postive")
        assert parse_annotation(raw).attitude is Attitude.POSITIVE

    def test_missing_tags_is_parse_error(self):
        with pytest.raises(ParseError):
            parse_annotation('{"text": "x", "summary": "y"}')

    def test_non_json_is_parse_error(self):
        with pytest.raises(ParseError):
            parse_annotation("no braces here")

    def test_empty_topic_falls_back_to_general(self):
        raw = '{"tags": {"topic": [], "attitude": [], "facts": [], "attributes": []}}'
        assert parse_annotation(raw).topic == "general"


class TestRuleBasedAnnotate:
    def test_degenerate_input(self):
        ann = RuleBasedAnalyzer().annotate("hello")
        assert ann.topic == "general"
        assert ann.attitude is Attitude.NONE
        assert ann.facts == [] and ann.attributes == []

    def test_topic_from_leading_content_words(self):
        ann = RuleBasedAnalyzer().annotate("The jazz workshop helped me")
        assert ann.topic == "jazz workshop"
        assert ann.attitude is Attitude.POSITIVE

    def test_negative_attitude(self):
        ann = RuleBasedAnalyzer().annotate("I stopped playing basketball due to stress")
        assert ann.attitude is Attitude.NEGATIVE
        assert ann.attributes == ["user feels negative about stopped playing"]

    def test_whole_message_becomes_fact(self):
        ann = RuleBasedAnalyzer().annotate("I adopted a beagle puppy in March")
        assert ann.facts == ["I adopted a beagle puppy in March"]

    def test_empty_text_rejected_by_wrapper(self):
        with pytest.raises(InvalidArgument):
            annotate(RuleBasedAnalyzer(), "  ")

    @given(st.text(min_size=1, max_size=200).filter(lambda s: s.strip()))
    @settings(max_examples=100, deadline=None)
    def test_never_errors_and_always_has_topic(self, text):
        ann = annotate(RuleBasedAnalyzer(), text)
        assert ann.topic.strip()

    @given(st.text(min_size=1, max_size=120).filter(lambda s: s.strip()))
    @settings(max_examples=50, deadline=None)
    def test_referentially_transparent(self, text):
        provider = RuleBasedAnalyzer()
        assert provider.annotate(text) == provider.annotate(text)


class TestDecideOps:
    def test_first_event_is_add(self):
        op = decide_fact_op(RuleBasedAnalyzer(), "joined jazz workshop", [])
        assert op.kind is OpKind.ADD

    def test_duplicate_after_normalization_is_ignore(self):
        op = decide_fact_op(
            RuleBasedAnalyzer(),
            "Joined the jazz workshop!",
            [(1, "joined jazz workshop")],
        )
        assert op.kind is OpKind.IGNORE

    def test_contradiction_is_update(self):
        op = decide_fact_op(
            RuleBasedAnalyzer(),
            "returned to basketball yesterday",
            [(3, "stopped playing basketball")],
        )
        assert op.kind is OpKind.UPDATE
        assert op.target_id == 3

    def test_attribute_stem_match_is_ignore(self):
        op = decide_attribute_op(
            RuleBasedAnalyzer(), "hates stress", [(2, "user hate stress")]
        )
        assert op.kind is OpKind.IGNORE

    def test_attribute_first_is_add(self):
        op = decide_attribute_op(RuleBasedAnalyzer(), "likes vintage decor", [])
        assert op.kind is OpKind.ADD

    def test_exact_duplicate_attribute_is_ignore(self):
        op = decide_attribute_op(
            RuleBasedAnalyzer(), "likes vintage decor", [(1, "likes vintage decor")]
        )
        assert op.kind is OpKind.IGNORE

    def test_unknown_update_target_downgraded_to_add(self):
        class BadProvider(RuleBasedAnalyzer):
            def decide_fact_op(self, event, existing):
                return MemoryOp(kind=OpKind.UPDATE, target_id=999, payload=event)

        op = decide_fact_op(BadProvider(), "anything goes", [(1, "zzz")])
        assert op.kind is OpKind.ADD

    def test_empty_event_rejected(self):
        with pytest.raises(InvalidArgument):
            decide_fact_op(RuleBasedAnalyzer(), " ", [])

    @given(
        st.text(min_size=1, max_size=80).filter(lambda s: s.strip()),
        st.lists(st.text(min_size=1, max_size=80).filter(lambda s: s.strip()), max_size=5),
    )
    @settings(max_examples=100, deadline=None)
    def test_decisions_are_pure(self, event, existing_texts):
        existing = list(enumerate(existing_texts, start=1))
        provider = RuleBasedAnalyzer()
        first = decide_fact_op(provider, event, existing)
        second = decide_fact_op(provider, event, existing)
        assert first == second


class TestNormalizePhrase:
    def test_subject_and_stopwords_dropped(self):
        assert normalize_phrase("the user hates stress") == frozenset({"hate", "stress"})

    def test_stemming_converges(self):
        assert normalize_phrase("stopped playing") == normalize_phrase("stop play")


class TestMergeCluster:
    def test_singleton_passthrough(self):
        assert merge_cluster(RuleBasedAnalyzer(), ["likes jazz"]) == "likes jazz"

    def test_rule_based_picks_longest(self):
        merged = merge_cluster(RuleBasedAnalyzer(), ["likes jazz", "enjoys jazz music"])
        assert merged == "enjoys jazz music"

    def test_longest_tie_breaks_lexicographically(self):
        assert longest_member(["bb", "aa"]) == "aa"

    def test_empty_cluster_rejected(self):
        with pytest.raises(InvalidArgument):
            merge_cluster(RuleBasedAnalyzer(), [])

    def test_provider_failure_falls_back_to_longest(self):
        class Failing(RuleBasedAnalyzer):
            def merge_cluster(self, members):
                raise ProviderError("remote down")

        merged = merge_cluster(Failing(), ["short", "much longer attribute"])
        assert merged == "much longer attribute"


class TestRespond:
    def test_empty_context_gets_marker(self):
        seen = {}

        class Spy(RuleBasedAnalyzer):
            def respond(self, context, query):
                seen["context"] = context
                return "ok"

        respond(Spy(), "", "what's up?")
        assert seen["context"] == EMPTY_CONTEXT_MARKER

    def test_rule_based_echoes_first_context_line(self):
        reply = respond(
            RuleBasedAnalyzer(),
            "[fact] enjoys cooking\n[#2 2026-01-01T00:00:00Z user] hi",
            "anything",
        )
        assert reply == "enjoys cooking"

    def test_empty_query_rejected(self):
        with pytest.raises(InvalidArgument):
            respond(RuleBasedAnalyzer(), "ctx", "")


class TestScriptedAnalyzer:
    def test_annotation_replay(self):
        ann = Annotation(topic="music workshop")
        provider = ScriptedAnalyzer(annotations={"hello jazz": ann})
        assert provider.annotate("hello jazz") is ann

    def test_unscripted_annotation_raises(self):
        with pytest.raises(ScriptError):
            ScriptedAnalyzer().annotate("mystery")

    def test_ops_keyed_by_existing_texts(self):
        op = MemoryOp(kind=OpKind.IGNORE)
        provider = ScriptedAnalyzer(fact_ops={("e", ("a", "b")): op})
        assert provider.decide_fact_op("e", [(1, "a"), (2, "b")]) is op
        with pytest.raises(ScriptError):
            provider.decide_fact_op("e", [(1, "a")])

    def test_response_keyed_by_context_hash(self):
        context = "[fact] likes jazz"
        key = ScriptedAnalyzer.context_key(context)
        provider = ScriptedAnalyzer(responses={(key, "q"): "scripted!"})
        assert provider.respond(context, "q") == "scripted!"
        with pytest.raises(ScriptError):
            provider.respond("other context", "q")

    def test_wildcard_context(self):
        provider = ScriptedAnalyzer(responses={("*", "q"): "any"})
        assert provider.respond("whatever", "q") == "any"


class TestPromptTemplates:
    def test_understand_template_renders_message_only(self):
        template = load_prompt("understand_user_experience")
        rendered = template.format(message="I like trains")
        assert '"I like trains"' in rendered
        assert "{message}" not in rendered
        # literal JSON braces survive rendering
        assert '"tags": {' in rendered

    @pytest.mark.parametrize(
        "name",
        [
            "memory_op_decision",
            "attribute_merge",
            "chat_response",
            "judge_goal_alignment_criteria",
            "judge_content_alignment_criteria",
            "judge_personalization_scoring",
            "judge_persona_alignment",
        ],
    )
    def test_all_templates_ship(self, name):
        assert load_prompt(name).strip()
