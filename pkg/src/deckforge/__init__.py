"""deckforge: turn heterogeneous engineering documents into validated
block-structured input decks for 1-D system thermal-hydraulics codes.

The pipeline: ingest documents into retrievable knowledge stores, extract
parameters into a human-auditable intermediate model spec, compile the spec
(plus schematic topology) into a deck, and validate the deck with
deterministic rules. A tool-calling agent loop orchestrates the steps against
pluggable chat providers.
"""

__version__ = "0.1.0"

from .deck_model import (  # noqa: F401
    Block,
    BlockRegistry,
    DeckSyntaxError,
    InputDeck,
    Param,
    ParamValue,
    default_registry,
    get_param,
    parse_deck,
    serialize_deck,
    upsert_param,
)
