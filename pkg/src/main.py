#!/usr/bin/env python3
"""EMT - Main Entry Point"""

import logging
import sys
from typing import Optional, Sequence

from src.cli import build_parser, dispatch
from src.core.errors import EmtError
from src.utils import setup_logging

logger = logging.getLogger(__name__)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """메인 함수: 성공 0, EMT 오류 1 (한 줄 메시지), 사용법 오류 2"""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    try:
        return dispatch(args) or 0
    except EmtError as e:
        message = " ".join(str(e).split())
        print(f"error: {e.kind}: {message}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 130
    except Exception as e:
        # 예상하지 못한 오류도 한 줄로 보고, 추적 정보는 DEBUG 로그에만 남긴다
        logger.debug("unhandled error", exc_info=True)
        message = " ".join(str(e).split()) or type(e).__name__
        print(f"error: internal: {type(e).__name__}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
